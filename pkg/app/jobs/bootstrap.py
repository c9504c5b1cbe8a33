"""
Bootstrap Job

Full-pipeline nonparametric bootstrap of the weighted linear effect model:
every replicate resamples rows, rebuilds the moment system, re-solves the
weights and refits. Replicates run concurrently in worker threads.
"""

import asyncio
from typing import List, Optional

import numpy as np

from ..config import get_settings
from ..core.exceptions import BalancingError, BootstrapFailedError, ParameterError
from ..core.logging import get_logger
from ..models.dataset import Dataset
from ..models.effect import BootstrapSummary, ConfidenceInterval
from ..models.pipeline import BalancePipelineConfig
from ..services.parametric import fit_linear_effect
from ..services.pipeline import estimate_weights

logger = get_logger(__name__)


class BootstrapJob:
    """
    Percentile confidence intervals for (intercept, B).

    Replicate b draws from the b-th child of SeedSequence(seed), so results
    do not depend on scheduling. Failed replicates are skipped and counted.
    """

    def __init__(
        self,
        dataset: Dataset,
        pipeline: Optional[BalancePipelineConfig] = None,
        replicates: Optional[int] = None,
        level: Optional[float] = None,
        seed: int = 0,
    ):
        self.settings = get_settings()
        self.dataset = dataset
        self.pipeline = pipeline or BalancePipelineConfig()
        self.replicates = replicates if replicates is not None else self.settings.bootstrap_replicates
        self.level = level if level is not None else self.settings.bootstrap_level
        self.seed = seed

        if self.replicates < 2:
            raise ParameterError(f"bootstrap needs at least 2 replicates, got {self.replicates}")
        if not 0.0 < self.level < 1.0:
            raise ParameterError(f"confidence level must lie in (0, 1), got {self.level}")

    def _replicate(self, index: int, child: np.random.SeedSequence) -> Optional[np.ndarray]:
        rng = np.random.default_rng(child)
        rows = rng.integers(0, self.dataset.n, size=self.dataset.n)
        sample = self.dataset.take(rows)
        try:
            weights = estimate_weights(sample, self.pipeline).weights
            return fit_linear_effect(sample, weights).coefficients
        except BalancingError as e:
            logger.debug("bootstrap_replicate_failed", replicate=index, error=e.message)
            return None

    async def run(self) -> BootstrapSummary:
        logger.info("bootstrap_started", replicates=self.replicates, level=self.level, seed=self.seed)
        children = np.random.SeedSequence(self.seed).spawn(self.replicates)
        semaphore = asyncio.Semaphore(self.settings.max_workers)

        async def bounded(index: int):
            async with semaphore:
                return await asyncio.to_thread(self._replicate, index, children[index])

        draws: List[Optional[np.ndarray]] = await asyncio.gather(
            *(bounded(b) for b in range(self.replicates))
        )

        successful = [d for d in draws if d is not None]
        failed = self.replicates - len(successful)
        if failed > self.settings.bootstrap_max_failure_rate * self.replicates or len(successful) < 2:
            raise BootstrapFailedError(failed=failed, total=self.replicates)

        estimate = fit_linear_effect(self.dataset, estimate_weights(self.dataset, self.pipeline).weights)
        draws_matrix = np.vstack(successful)
        alpha = (1.0 - self.level) / 2.0
        lower, upper = np.quantile(draws_matrix, [alpha, 1.0 - alpha], axis=0)
        intervals = [
            ConfidenceInterval(name=name, estimate=float(value), lower=float(lo), upper=float(hi))
            for name, value, lo, hi in zip(estimate.column_names, estimate.coefficients, lower, upper)
        ]

        logger.info("bootstrap_completed", replicates=self.replicates, failed=failed)
        return BootstrapSummary(
            intervals=intervals,
            level=self.level,
            replicates=self.replicates,
            failed=failed,
            seed=self.seed,
            draws=draws_matrix,
        )


async def bootstrap_ci(
    dataset: Dataset,
    pipeline: Optional[BalancePipelineConfig] = None,
    replicates: Optional[int] = None,
    level: Optional[float] = None,
    seed: int = 0,
) -> BootstrapSummary:
    """Entry point: run a BootstrapJob."""
    job = BootstrapJob(dataset, pipeline, replicates, level, seed)
    return await job.run()
