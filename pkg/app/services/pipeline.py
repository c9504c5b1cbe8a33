"""
Pipeline Service

Single entry point from a dataset and a BalancePipelineConfig to balancing
weights, shared by the CLI, the bootstrap and the study runner.
"""

from typing import List, Optional, Tuple

import numpy as np

from ..core.exceptions import BalancingError, ParameterError
from ..core.logging import get_logger
from ..models.balance import BalanceResult, TuningResult, effective_sample_size
from ..models.dataset import BasisSpec, CovariateBasis, Dataset
from ..models.moments import MomentSystem
from ..models.pipeline import (
    BalancePipelineConfig,
    MethodComparison,
    WeightingMethod,
    WeightingOutcome,
)
from ..models.screening import ScreeningResult
from ..models.study import ScenarioTruth
from .balancer import (
    default_delta_grid,
    default_mdabw_deltas,
    mean_imbalance,
    solve_exact_entropy,
    solve_mdabw,
    solve_weights,
    tune_delta,
)
from .moment_builder import build_moment_system
from .scenarios import oracle_weights
from .screening import select_subset

logger = get_logger(__name__)

COMPARED_METHODS = (
    WeightingMethod.UNWEIGHTED,
    WeightingMethod.EB,
    WeightingMethod.MDABW,
    WeightingMethod.WEBM,
)


def fixed_weights_result(method: str, weights, ms: MomentSystem) -> BalanceResult:
    """Wrap externally given weights (uniform, oracle) with their balance diagnostics."""
    weights = np.asarray(weights, dtype=float)
    imbalance = mean_imbalance(weights, ms)
    return BalanceResult(
        method=method,
        theta=np.zeros(ms.k_effective),
        weights=weights,
        weim=float(imbalance @ imbalance),
        delta_used=0.0,
        imbalance=imbalance,
        converged=True,
        effective_sample_size=effective_sample_size(weights),
    )


def screening_delta(dataset: Dataset, pipeline: BalancePipelineConfig) -> float:
    """Fixed delta for the screening path."""
    if pipeline.screening_delta is not None:
        return pipeline.screening_delta
    full = build_moment_system(dataset, BasisSpec(covariate_basis=CovariateBasis.LINEAR))
    grid = default_delta_grid(full)
    return grid[len(grid) // 2]


def prepare_moments(dataset: Dataset, pipeline: BalancePipelineConfig) -> Tuple[MomentSystem, Optional[ScreeningResult]]:
    """Moment system of the configured basis, restricted to the screened covariates when screening is on."""
    basis = pipeline.basis
    screening = None
    if pipeline.screening:
        delta = screening_delta(dataset, pipeline)
        screening = select_subset(dataset, pipeline.balance.with_delta(delta), pipeline.break_factor)
        basis = BasisSpec(
            covariate_basis=CovariateBasis.LINEAR,
            covariate_subset=screening.selected_indices,
        )
    return build_moment_system(dataset, basis), screening


def weights_for(
    method: WeightingMethod,
    ms: MomentSystem,
    pipeline: BalancePipelineConfig,
    dataset: Dataset,
    truth: Optional[ScenarioTruth] = None,
) -> Tuple[BalanceResult, Optional[TuningResult]]:
    """Weights of one method on a prepared moment system."""
    if method == WeightingMethod.UNWEIGHTED:
        return fixed_weights_result("unweighted", np.ones(ms.n), ms), None
    if method == WeightingMethod.ORACLE:
        if truth is None:
            raise ParameterError("oracle weights need the scenario ground truth")
        return fixed_weights_result("oracle", oracle_weights(dataset, truth), ms), None
    if method == WeightingMethod.EB:
        return solve_exact_entropy(ms, pipeline.balance), None
    if method == WeightingMethod.MDABW:
        deltas = default_mdabw_deltas(ms, pipeline.mdabw_scale)
        return solve_mdabw(ms, deltas, pipeline.balance), None
    if pipeline.tune_delta:
        tuning = tune_delta(ms, pipeline.delta_grid, pipeline.balance)
        return tuning.best, tuning
    return solve_weights(ms, pipeline.balance), None


def run_weighting(
    dataset: Dataset,
    pipeline: Optional[BalancePipelineConfig] = None,
    truth: Optional[ScenarioTruth] = None,
) -> WeightingOutcome:
    pipeline = pipeline or BalancePipelineConfig()
    dataset.check_finite()
    ms, screening = prepare_moments(dataset, pipeline)
    result, tuning = weights_for(pipeline.method, ms, pipeline, dataset, truth)
    return WeightingOutcome(result=result, moments=ms, screening=screening, tuning=tuning)


def estimate_weights(
    dataset: Dataset,
    pipeline: Optional[BalancePipelineConfig] = None,
    truth: Optional[ScenarioTruth] = None,
) -> BalanceResult:
    """Balancing weights of the configured method."""
    return run_weighting(dataset, pipeline, truth).result


def compare_methods(dataset: Dataset, pipeline: Optional[BalancePipelineConfig] = None) -> List[MethodComparison]:
    """
    Unweighted, EB, MDABW and WEBM weights on one moment system.

    Failures are reported per method instead of aborting the comparison.
    """
    pipeline = pipeline or BalancePipelineConfig()
    dataset.check_finite()
    ms, _ = prepare_moments(dataset, pipeline)
    rows: List[MethodComparison] = []
    for method in COMPARED_METHODS:
        try:
            result, _ = weights_for(method, ms, pipeline, dataset)
        except BalancingError as exc:
            logger.warning("method_failed", method=method.value, error=exc.message)
            rows.append(MethodComparison(method=method, error=exc.message))
            continue
        rows.append(MethodComparison(
            method=method,
            weim=result.weim,
            effective_sample_size=result.effective_sample_size,
            converged=result.converged,
            delta_used=result.delta_used,
        ))
    return rows
