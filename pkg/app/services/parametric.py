"""
Parametric Effect Service

Weighted least-squares fit of s(T; beta) = c + <B, T> and its sandwich
covariance.
"""

from typing import List, Tuple

import numpy as np
from scipy import linalg

from ..core.exceptions import InputError, SingularDesignError, SingularHessianError
from ..core.logging import get_logger
from ..models.dataset import Dataset
from ..models.effect import LinearEffectModel, VarianceEstimate, VarianceMethod

logger = get_logger(__name__)

SUPPORT_TOLERANCE = 1e-8


def design_matrix(dataset: Dataset) -> Tuple[np.ndarray, List[str]]:
    """h(T) = (1, row-major vec T) per observation, with column names."""
    flat = dataset.treatments.reshape(dataset.n, -1)
    return np.column_stack([np.ones(dataset.n), flat]), ["intercept"] + dataset.treatment_names()


def _check_weights(weights, n: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise InputError(f"weights have shape {weights.shape}, expected ({n},)")
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise InputError("weights must be finite and nonnegative")
    return weights


def _pivoted_rank(matrix: np.ndarray):
    """Numerical rank from a column-pivoted QR, with the factors."""
    q, r, pivots = linalg.qr(matrix, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(r))
    tolerance = diagonal[0] * max(matrix.shape) * np.finfo(float).eps if diagonal.size else 0.0
    return int(np.sum(diagonal > tolerance)), q, r, pivots


def fit_linear_effect(dataset: Dataset, weights) -> LinearEffectModel:
    """
    beta = argmin sum_i w_i (Y_i - h_i' beta)^2.

    Solved by pivoted QR of the sqrt(w)-scaled design. Observations whose
    weight is below SUPPORT_TOLERANCE times the largest weight do not count
    toward the rank, so weights concentrated on fewer units than there are
    coefficients raise SingularDesignError naming the columns the pivoting
    pushed out.
    """
    dataset.check_finite()
    weights = _check_weights(weights, dataset.n)
    if weights.max() <= 0.0:
        raise InputError("weights must not all be zero")
    design, names = design_matrix(dataset)
    root = np.sqrt(weights)
    scaled = design * root[:, None]
    response = dataset.outcomes * root

    rank, q, r, pivots = _pivoted_rank(scaled)
    support = weights > SUPPORT_TOLERANCE * weights.max()
    if rank == design.shape[1] and not support.all():
        rank, _, _, support_pivots = _pivoted_rank(scaled[support])
        if rank < design.shape[1]:
            pivots = support_pivots
    if rank < design.shape[1]:
        dependent = [names[j] for j in pivots[rank:]]
        logger.warning("design_rank_deficient", rank=rank, columns=design.shape[1], support=int(support.sum()))
        raise SingularDesignError(dependent)

    solution = linalg.solve_triangular(r, q.T @ response)
    beta = np.empty_like(solution)
    beta[pivots] = solution

    fitted = design @ beta
    p, q_dim = dataset.p, dataset.q
    logger.debug("linear_effect_fitted", n=dataset.n, p=p, q=q_dim)
    return LinearEffectModel(
        intercept=float(beta[0]),
        coefficient_matrix=beta[1:].reshape(p, q_dim),
        fitted_values=fitted,
        residuals=dataset.outcomes - fitted,
        column_names=names,
    )


def sandwich_variance(model: LinearEffectModel, dataset: Dataset, weights) -> VarianceEstimate:
    """
    Plug-in sandwich covariance V/n with weights rescaled to mean one.

    U = (2/n) sum w h h', meat = (4/n) sum w^2 r^2 h h', V = U^-1 meat U^-1.
    """
    weights = _check_weights(weights, dataset.n)
    if weights.mean() <= 0:
        raise InputError("weights must not all be zero")
    weights = weights / weights.mean()
    n = dataset.n
    design, _ = design_matrix(dataset)
    residuals = dataset.outcomes - model.predict(dataset.treatments)

    bread = 2.0 / n * design.T @ (weights[:, None] * design)
    meat = 4.0 / n * design.T @ ((weights ** 2 * residuals ** 2)[:, None] * design)

    if np.linalg.cond(bread) > 1.0 / np.finfo(float).eps:
        raise SingularHessianError("weighted Hessian of the effect model is singular")
    try:
        bread_inv = linalg.inv(bread)
    except linalg.LinAlgError as exc:
        raise SingularHessianError(f"weighted Hessian of the effect model is singular: {exc}")

    covariance = bread_inv @ meat @ bread_inv / n
    covariance = (covariance + covariance.T) / 2.0
    return VarianceEstimate(
        covariance=covariance,
        standard_errors=np.sqrt(np.clip(np.diag(covariance), 0.0, None)),
        method=VarianceMethod.SANDWICH,
    )


def coefficient_rmse(estimated: np.ndarray, truth: np.ndarray) -> float:
    """Element-wise RMSE over the p x q coefficient entries."""
    diff = np.asarray(estimated, dtype=float) - np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean(diff ** 2)))
