"""
Screening Service

Ball-correlation ranking of covariates against the matrix treatment and the
break-point search over nested covariate prefixes.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from ..config import get_settings
from ..core.exceptions import DegenerateDistanceError, DivergingDualError, ParameterError
from ..core.logging import get_logger
from ..models.balance import BalanceConfig
from ..models.dataset import BasisSpec, CovariateBasis, Dataset
from ..models.screening import CovariateRanking, ScreeningResult
from .balancer import solve_weights
from .moment_builder import build_moment_system

logger = get_logger(__name__)

JUMP_SLACK = 1e-8


def distance_matrix(values: np.ndarray) -> np.ndarray:
    """Pairwise distances: |.| for a vector, Frobenius for n x p x q arrays."""
    values = np.asarray(values, dtype=float)
    flat = values.reshape(values.shape[0], -1)
    return squareform(pdist(flat, metric="euclidean"))


class BallProfile(NamedTuple):
    """Distances of one variable with its per-centre ball counts and squared ball self-covariance."""
    distances: np.ndarray
    counts: np.ndarray
    self_covariance: float


def ball_profile(distances: np.ndarray) -> BallProfile:
    """counts[i, j] = #{k: d[i,k] <= d[i,j]}, from one sort per row."""
    n = distances.shape[0]
    ordered = np.sort(distances, axis=1)
    counts = np.stack([np.searchsorted(ordered[i], distances[i], side="right") for i in range(n)])
    share = counts / n
    return BallProfile(distances, counts, float(np.sum((share - share * share) ** 2)) / n ** 2)


def joint_ball_counts(x: BallProfile, y: BallProfile, centre: int) -> np.ndarray:
    """joint[j] = #{k: dx[i,k] <= dx[i,j] and dy[i,k] <= dy[i,j]} for centre i."""
    inside_x = x.distances[centre][None, :] <= x.distances[centre][:, None]
    inside_y = y.distances[centre][None, :] <= y.distances[centre][:, None]
    return (inside_x & inside_y).sum(axis=1)


def ball_cross_covariance(x: BallProfile, y: BallProfile) -> float:
    """Squared sample ball covariance between two profiled variables, V-statistic form."""
    n = x.distances.shape[0]
    total = 0.0
    for i in range(n):
        joint = joint_ball_counts(x, y, i) / n
        total += float(np.sum((joint - x.counts[i] * y.counts[i] / n ** 2) ** 2))
    return total / n ** 2


def _correlation_from_profiles(x: BallProfile, y: BallProfile) -> float:
    denominator = math.sqrt(x.self_covariance * y.self_covariance)
    if denominator <= 0.0:
        raise DegenerateDistanceError("ball covariance of a constant input is zero")
    return float(min(max(ball_cross_covariance(x, y) / denominator, 0.0), 1.0))


def ball_correlation(x, treatments) -> float:
    """Sample ball correlation between a scalar covariate and the treatment matrices."""
    x = np.asarray(x, dtype=float)
    treatments = np.asarray(treatments, dtype=float)
    if x.shape[0] < 3:
        raise ParameterError(f"ball correlation needs at least 3 observations, got {x.shape[0]}")
    if x.shape[0] != treatments.shape[0]:
        raise ParameterError("covariate and treatments disagree on n")
    if np.ptp(x) == 0.0:
        raise DegenerateDistanceError("covariate is constant")
    if np.all(treatments == treatments[0]):
        raise DegenerateDistanceError("all treatment matrices are identical")
    return _correlation_from_profiles(ball_profile(distance_matrix(x)), ball_profile(distance_matrix(treatments)))


def rank_covariates(dataset: Dataset) -> CovariateRanking:
    """
    Covariates by descending Bcor with the treatment, ties by index.

    The treatment side is profiled once and shared by every covariate.
    Constant covariates are recorded with Bcor 0 and ranked last.
    """
    treatments = dataset.treatments
    if np.all(treatments == treatments[0]):
        raise DegenerateDistanceError("all treatment matrices are identical")
    if dataset.n < 3:
        raise ParameterError(f"ball correlation needs at least 3 observations, got {dataset.n}")
    treatment_side = ball_profile(distance_matrix(treatments))

    def score(j: int) -> Optional[float]:
        column = dataset.covariates[:, j]
        if np.ptp(column) == 0.0:
            return None
        try:
            return _correlation_from_profiles(ball_profile(distance_matrix(column)), treatment_side)
        except DegenerateDistanceError:
            return None

    with ThreadPoolExecutor(max_workers=get_settings().max_workers) as executor:
        scores = list(executor.map(score, range(dataset.n_covariates)))

    degenerate = [j for j, s in enumerate(scores) if s is None]
    values = [0.0 if s is None else s for s in scores]
    ranking = sorted(range(len(values)), key=lambda j: (j in degenerate, -values[j], j))

    logger.info("covariates_ranked", n=dataset.n, covariates=len(values), degenerate=len(degenerate))
    return CovariateRanking(ranking=ranking, bcor_values=values, degenerate=degenerate)


def find_break_point(path: Sequence[float], factor: float) -> Optional[int]:
    """
    First 1-based step j >= 2 whose value jumps above factor times every earlier value.

    Non-finite entries (failed steps) always count as a break.
    """
    if factor <= 1.0:
        raise ParameterError(f"break factor must exceed 1, got {factor}")
    for j in range(2, len(path) + 1):
        current = path[j - 1]
        if current is None or not math.isfinite(current):
            return j
        if current > factor * max(path[: j - 1]) + JUMP_SLACK:
            return j
    return None


def select_subset(
    dataset: Dataset,
    cfg: Optional[BalanceConfig] = None,
    break_factor: Optional[float] = None,
) -> ScreeningResult:
    """
    Grow the linear covariate basis along the ranking until WEIM breaks.

    Step j balances (1, X_(1), ..., X_(j)) at the fixed cfg.delta. A solver
    divergence at step j >= 2 is a break; at step 1 it propagates.
    """
    cfg = cfg or BalanceConfig()
    factor = break_factor if break_factor is not None else get_settings().break_factor
    if factor <= 1.0:
        raise ParameterError(f"break factor must exceed 1, got {factor}")

    ranking = rank_covariates(dataset)
    path: List[float] = []
    errors: dict[int, str] = {}
    break_step: Optional[int] = None

    for j in range(1, dataset.n_covariates + 1):
        spec = BasisSpec(covariate_basis=CovariateBasis.LINEAR, covariate_subset=ranking.ranking[:j])
        ms = build_moment_system(dataset, spec)
        try:
            path.append(solve_weights(ms, cfg).weim)
        except DivergingDualError as exc:
            if j == 1:
                raise
            errors[j] = exc.message
            path.append(float("inf"))
        if find_break_point(path, factor) == j:
            break_step = j
            break

    selected = break_step - 1 if break_step is not None else dataset.n_covariates
    logger.info("subset_selected", selected=selected, break_step=break_step, steps=len(path))

    return ScreeningResult(
        ranking=ranking.ranking,
        bcor_values=ranking.bcor_values,
        weim_path=path,
        selected_count=selected,
        selected_indices=ranking.ranking[:selected],
        break_step=break_step,
        step_errors=errors,
        break_factor=factor,
    )
