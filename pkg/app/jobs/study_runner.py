"""
Study Runner Job

Replicated Monte-Carlo study over the simulation scenarios. Each replicate
draws one dataset, builds its moment system once and evaluates every
configured weighting method on it.

Run standalone:
    python -m app.jobs.study_runner
"""

import asyncio
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..config import get_settings
from ..core.exceptions import BalancingError, StudyConfigError
from ..core.logging import get_logger, setup_logging
from ..models.dataset import Dataset
from ..models.moments import MomentSystem
from ..models.pipeline import BalancePipelineConfig, Estimator, WeightingMethod
from ..models.study import ScenarioTruth, StudyCell, StudyConfig, StudyReport
from ..services.broadcast import fit_broadcasted
from ..services.parametric import coefficient_rmse, fit_linear_effect
from ..services.pipeline import prepare_moments, weights_for
from ..services.scenarios import generate_scenario, scenario_truth, true_surface

logger = get_logger(__name__)

# exact-balance comparators have no screening path and no solution at L = 49, 99
HIGH_DIMENSIONAL_ONLY = (WeightingMethod.UNWEIGHTED, WeightingMethod.WEBM, WeightingMethod.ORACLE)

# (value, observed-Y value, error message)
Outcome = Tuple[Optional[float], Optional[float], Optional[str]]


def replicate_seed(master_seed: int, scenario_id: int, n: int, replicate: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, scenario_id, n, replicate])


class StudyJob:
    """
    Evaluate (scenario, n, method) cells over independent replicates.

    Replicates run in worker threads; results are merged by replicate index,
    so the report does not depend on scheduling.
    """

    def __init__(self, config: StudyConfig):
        self.settings = get_settings()
        self.config = config
        self._validate()

    # ==========================================================================
    # Configuration
    # ==========================================================================

    def _estimator(self, truth: ScenarioTruth) -> Estimator:
        return self.config.estimator or truth.default_estimator

    def _validate(self) -> None:
        for scenario_id in self.config.scenarios:
            if scenario_id not in range(1, 7):
                raise StudyConfigError(f"unknown scenario {scenario_id}; expected 1..6")
            truth = scenario_truth(scenario_id)
            if truth.screening:
                unsupported = [m.value for m in self.config.methods if m not in HIGH_DIMENSIONAL_ONLY]
                if unsupported:
                    raise StudyConfigError(
                        f"scenario {scenario_id} is high-dimensional; methods {unsupported} are not supported there"
                    )
            if truth.uses_coefficient_metric and self._estimator(truth) == Estimator.BROADCASTED:
                raise StudyConfigError(
                    f"scenario {scenario_id} is scored on coefficients; use the linear estimator"
                )
        for n in self.config.sample_sizes:
            if n < 10:
                raise StudyConfigError(f"sample size {n} is too small; need n >= 10")

    def _pipeline(self, truth: ScenarioTruth) -> BalancePipelineConfig:
        return BalancePipelineConfig(
            basis=truth.basis,
            screening=truth.screening,
            delta_grid=self.config.delta_grid,
        )

    # ==========================================================================
    # One replicate
    # ==========================================================================

    def _score(self, dataset: Dataset, truth: ScenarioTruth, weights: np.ndarray) -> Tuple[float, Optional[float]]:
        estimator = self._estimator(truth)
        if truth.uses_coefficient_metric:
            model = fit_linear_effect(dataset, weights)
            return coefficient_rmse(model.coefficient_matrix, truth.true_B), None

        if estimator == Estimator.BROADCASTED:
            fitted = fit_broadcasted(dataset, weights, opts=self.config.broadcast).fitted_values
        else:
            fitted = fit_linear_effect(dataset, weights).fitted_values
        surface = true_surface(dataset.treatments, truth)
        truth_rmse = float(np.sqrt(np.mean((fitted - surface) ** 2)))
        observed_rmse = float(np.sqrt(np.mean((fitted - dataset.outcomes) ** 2)))
        return truth_rmse, observed_rmse

    def _replicate(self, scenario_id: int, n: int, replicate: int) -> Dict[WeightingMethod, Outcome]:
        seed = replicate_seed(self.config.master_seed, scenario_id, n, replicate)
        dataset, truth = generate_scenario(scenario_id, n, seed)
        pipeline = self._pipeline(truth)

        moments: Optional[MomentSystem] = None
        outcomes: Dict[WeightingMethod, Outcome] = {}
        for method in self.config.methods:
            try:
                if moments is None:
                    moments, _ = prepare_moments(dataset, pipeline)
                result, _ = weights_for(method, moments, pipeline, dataset, truth)
                value, observed = self._score(dataset, truth, result.weights)
                outcomes[method] = (value, observed, None)
            except BalancingError as e:
                logger.warning(
                    "study_replicate_failed",
                    scenario=scenario_id,
                    n=n,
                    replicate=replicate,
                    method=method.value,
                    error=e.message,
                )
                outcomes[method] = (None, None, e.message)
        return outcomes

    # ==========================================================================
    # Job
    # ==========================================================================

    async def run(self) -> StudyReport:
        config = self.config
        logger.info(
            "study_job_started",
            scenarios=config.scenarios,
            sample_sizes=config.sample_sizes,
            replicates=config.replicates,
            methods=[m.value for m in config.methods],
            master_seed=config.master_seed,
        )
        semaphore = asyncio.Semaphore(self.settings.max_workers)

        async def bounded(scenario_id: int, n: int, replicate: int):
            async with semaphore:
                return await asyncio.to_thread(self._replicate, scenario_id, n, replicate)

        keys = [
            (s, n, r)
            for s in config.scenarios
            for n in config.sample_sizes
            for r in range(config.replicates)
        ]
        results = await asyncio.gather(*(bounded(*key) for key in keys))
        by_key = dict(zip(keys, results))

        cells: List[StudyCell] = []
        for s in config.scenarios:
            metric = "coefficient_rmse" if scenario_truth(s).uses_coefficient_metric else "fitted_rmse"
            for n in config.sample_sizes:
                for method in config.methods:
                    values: List[Optional[float]] = []
                    observed: List[Optional[float]] = []
                    failures: Dict[int, str] = {}
                    for r in range(config.replicates):
                        value, obs, error = by_key[(s, n, r)][method]
                        values.append(value)
                        observed.append(obs)
                        if error is not None:
                            failures[r] = error
                    cells.append(StudyCell.aggregate(s, n, method, metric, values, failures, observed))

        failed = sum(len(c.failures) for c in cells)
        logger.info("study_job_completed", cells=len(cells), failed_replicates=failed)
        return StudyReport(config=config, cells=cells)


async def run_study(config: StudyConfig) -> StudyReport:
    """Entry point: run a StudyJob."""
    job = StudyJob(config)
    return await job.run()


if __name__ == "__main__":
    setup_logging()
    report = asyncio.run(run_study(StudyConfig(scenarios=[1], sample_sizes=[500], replicates=10)))
    print(report.render_table(), end="")
