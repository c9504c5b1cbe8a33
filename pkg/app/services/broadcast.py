"""
Broadcast Regression Service

Nonparametric dose-response estimation with one shared spline applied to
every treatment entry and a rank-R CP structure across entries:

    s(T) = c + (1/pq) sum_r sum_{a,b} beta1_r[a] beta2_r[b] <alpha_r, b~(T_ab)>

fit by block-wise exact least squares over {c, alpha}, {beta1}, {beta2}.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline

from ..config import get_settings
from ..core.exceptions import DomainError, InputError, ParameterError
from ..core.logging import get_logger
from ..models.dataset import Dataset
from ..models.spline import BroadcastOptions, CPModel, ResponseConvention, SplineSpec

logger = get_logger(__name__)


def default_spline() -> SplineSpec:
    settings = get_settings()
    return SplineSpec.equally_spaced(settings.spline_order, settings.spline_dimension)


# =============================================================================
# Bases
# =============================================================================

def _check_domain(values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise DomainError("spline argument must be finite")
    if np.any(values < 0.0) or np.any(values > 1.0):
        raise DomainError(
            f"spline argument outside [0, 1] (min {values.min():.6g}, max {values.max():.6g})"
        )


def truncated_basis_matrix(spec: SplineSpec, values) -> np.ndarray:
    """
    Truncated power basis without the constant, evaluated elementwise.

    Returns an array of shape values.shape + (D - 1,): x, ..., x^(order-1)
    followed by (x - knot)_+^(order-1) for every interior knot.
    """
    values = np.asarray(values, dtype=float)
    _check_domain(values)
    degree = spec.order - 1
    powers = [values ** d for d in range(1, degree + 1)]
    hinges = [np.maximum(values - knot, 0.0) ** degree for knot in spec.interior_knots]
    return np.stack(powers + hinges, axis=-1)


def truncated_basis_eval(spec: SplineSpec, x: float) -> np.ndarray:
    """(D - 1)-vector of the non-constant truncated power basis at x in [0, 1]."""
    return truncated_basis_matrix(spec, np.asarray(float(x)))


def clamped_knots(spec: SplineSpec) -> np.ndarray:
    return np.concatenate([
        np.zeros(spec.order),
        np.asarray(spec.interior_knots, dtype=float),
        np.ones(spec.order),
    ])


def bspline_design(spec: SplineSpec, x) -> np.ndarray:
    """len(x) x D B-spline design matrix on the clamped knot vector."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    _check_domain(x)
    return BSpline.design_matrix(x, clamped_knots(spec), spec.order - 1).toarray()


# =============================================================================
# Input scaling and prediction
# =============================================================================

def _scale(treatments: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> Tuple[np.ndarray, int]:
    span = upper - lower
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (treatments - lower) / safe, 0.0)
    outside = int(np.count_nonzero((scaled < 0.0) | (scaled > 1.0)))
    return np.clip(scaled, 0.0, 1.0), outside


def _entry_features(treatments: np.ndarray, spec: SplineSpec, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    treatments = np.asarray(treatments, dtype=float)
    if not np.all(np.isfinite(treatments)):
        raise InputError("treatment matrices must be finite")
    scaled, outside = _scale(treatments, lower, upper)
    if outside:
        logger.debug("spline_inputs_clamped", entries=outside)
    return truncated_basis_matrix(spec, scaled)


def _evaluate(features: np.ndarray, constant: float, rows: np.ndarray, cols: np.ndarray, coeffs: np.ndarray) -> np.ndarray:
    p, q = rows.shape[1], cols.shape[1]
    return constant + np.einsum("iabd,ra,rb,rd->i", features, rows, cols, coeffs, optimize=True) / (p * q)


def predict_batch(model: CPModel, treatments) -> np.ndarray:
    """Predictions for an n x p x q stack of treatment matrices."""
    treatments = np.asarray(treatments, dtype=float)
    if treatments.ndim != 3 or treatments.shape[1:] != (model.p, model.q):
        raise InputError(f"treatments must be n x {model.p} x {model.q}, got {treatments.shape}")
    features = _entry_features(treatments, model.spline, model.input_lower, model.input_upper)
    return _evaluate(features, model.constant, model.factors_rows, model.factors_cols, model.spline_coeffs)


def predict(model: CPModel, treatment) -> float:
    """s(T) for one p x q treatment matrix."""
    return float(predict_batch(model, np.asarray(treatment, dtype=float)[None])[0])


def predict_bspline(
    constant: float,
    factors_rows,
    factors_cols,
    bspline_coeffs,
    spec: SplineSpec,
    lower,
    upper,
    treatments,
) -> np.ndarray:
    """Evaluate the B-spline parameterization (R x D coefficients, constant kept in the spline)."""
    treatments = np.asarray(treatments, dtype=float)
    rows = np.asarray(factors_rows, dtype=float)
    cols = np.asarray(factors_cols, dtype=float)
    coeffs = np.asarray(bspline_coeffs, dtype=float)
    scaled, _ = _scale(treatments, np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))
    design = bspline_design(spec, scaled.ravel()).reshape(scaled.shape + (spec.dimension,))
    return _evaluate(design, constant, rows, cols, coeffs)


def _change_of_basis(spec: SplineSpec) -> np.ndarray:
    """D x D matrix C with B(x) = [1, b~(x)] C, solved on a dense grid."""
    grid = np.linspace(0.0, 1.0, 8 * spec.dimension)
    truncated = np.column_stack([np.ones(grid.size), truncated_basis_matrix(spec, grid)])
    change, *_ = linalg.lstsq(truncated, bspline_design(spec, grid))
    return change


def convert_bspline_model(
    constant: float,
    factors_rows,
    factors_cols,
    bspline_coeffs,
    spec: SplineSpec,
    lower,
    upper,
) -> CPModel:
    """
    Truncated-power CPModel equal to a B-spline parameterized model.

    Each f_r = a0_r + <alpha_r, b~> moves its constant into
    c~ = c + (1/pq) sum_r a0_r sum(beta1_r) sum(beta2_r).
    """
    rows = np.asarray(factors_rows, dtype=float)
    cols = np.asarray(factors_cols, dtype=float)
    coeffs = np.asarray(bspline_coeffs, dtype=float)
    if coeffs.shape != (rows.shape[0], spec.dimension):
        raise ParameterError(f"bspline coefficients must be R x {spec.dimension}, got {coeffs.shape}")

    truncated = coeffs @ _change_of_basis(spec).T
    offsets, alphas = truncated[:, 0], truncated[:, 1:]
    p, q = rows.shape[1], cols.shape[1]
    new_constant = constant + float(np.sum(offsets * rows.sum(axis=1) * cols.sum(axis=1))) / (p * q)
    rows, cols, alphas = _normalize_factors(rows, cols, alphas)
    return CPModel(
        constant=new_constant,
        factors_rows=rows,
        factors_cols=cols,
        spline_coeffs=alphas,
        spline=spec,
        input_lower=lower,
        input_upper=upper,
    )


# =============================================================================
# Fitting
# =============================================================================

def _normalize_factors(rows: np.ndarray, cols: np.ndarray, coeffs: np.ndarray):
    """Unit-norm factor rows with a positive first nonzero entry; scale and sign go to alpha."""
    rows, cols, coeffs = rows.copy(), cols.copy(), coeffs.copy()
    for r in range(rows.shape[0]):
        for factors in (rows, cols):
            norm = np.linalg.norm(factors[r])
            if norm == 0.0:
                continue
            factors[r] /= norm
            coeffs[r] *= norm
            nonzero = np.flatnonzero(factors[r])
            if factors[r, nonzero[0]] < 0:
                factors[r] *= -1.0
                coeffs[r] *= -1.0
    return rows, cols, coeffs


class _BlockProblem:
    """Shared data of one fit: entry features, response and sample weights."""

    def __init__(self, features: np.ndarray, response: np.ndarray, sample_weights: np.ndarray, ridge: float):
        self.features = features
        self.response = response
        self.sample_weights = sample_weights
        self.root = np.sqrt(sample_weights)
        self.ridge = ridge
        self.n, self.p, self.q, self.d = features.shape
        self.ridge_used = False

    def objective(self, constant, rows, cols, coeffs) -> float:
        residual = self.response - _evaluate(self.features, constant, rows, cols, coeffs)
        return float(np.sum(self.sample_weights * residual ** 2))

    def least_squares(self, design: np.ndarray, response: np.ndarray) -> np.ndarray:
        scaled = design * self.root[:, None]
        target = response * self.root
        solution, _, rank, _ = linalg.lstsq(scaled, target)
        if rank < design.shape[1]:
            self.ridge_used = True
            gram = scaled.T @ scaled + self.ridge * np.eye(design.shape[1])
            solution = linalg.solve(gram, scaled.T @ target, assume_a="pos")
        return solution

    def update_constant_and_coeffs(self, constant, rows, cols, coeffs):
        z = np.einsum("iabd,ra,rb->ird", self.features, rows, cols, optimize=True) / (self.p * self.q)
        design = np.column_stack([np.ones(self.n), z.reshape(self.n, -1)])
        solution = self.least_squares(design, self.response)
        return float(solution[0]), rows, cols, solution[1:].reshape(coeffs.shape)

    def update_rows(self, constant, rows, cols, coeffs):
        g = np.einsum("iabd,rb,rd->ira", self.features, cols, coeffs, optimize=True) / (self.p * self.q)
        solution = self.least_squares(g.reshape(self.n, -1), self.response - constant)
        return constant, solution.reshape(rows.shape), cols, coeffs

    def update_cols(self, constant, rows, cols, coeffs):
        h = np.einsum("iabd,ra,rd->irb", self.features, rows, coeffs, optimize=True) / (self.p * self.q)
        solution = self.least_squares(h.reshape(self.n, -1), self.response - constant)
        return constant, rows, solution.reshape(cols.shape), coeffs


def _unit_rows(rng: np.random.Generator, count: int, size: int) -> np.ndarray:
    vectors = rng.standard_normal((count, size))
    return vectors / np.linalg.norm(vectors, axis=1, keepdims=True)


def _initial_factors(problem: _BlockProblem, rank: int, restart: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Restart 0 uses the SVD of an unstructured least-squares fit when n allows; others are random."""
    rng = np.random.default_rng([seed, restart])
    rows = _unit_rows(rng, rank, problem.p)
    cols = _unit_rows(rng, rank, problem.q)
    unstructured = problem.p * problem.q * problem.d + 1
    if restart != 0 or problem.n <= unstructured:
        return rows, cols

    design = np.column_stack([np.ones(problem.n), problem.features.reshape(problem.n, -1)])
    solution, *_ = linalg.lstsq(design * problem.root[:, None], problem.response * problem.root)
    tensor = solution[1:].reshape(problem.p, problem.q, problem.d)
    left, _, _ = np.linalg.svd(tensor.reshape(problem.p, -1), full_matrices=False)
    right, _, _ = np.linalg.svd(tensor.transpose(1, 0, 2).reshape(problem.q, -1), full_matrices=False)
    k_rows = min(rank, left.shape[1])
    k_cols = min(rank, right.shape[1])
    rows[:k_rows] = left[:, :k_rows].T
    cols[:k_cols] = right[:, :k_cols].T
    return rows, cols


def _descend(problem: _BlockProblem, rank: int, restart: int, opts: BroadcastOptions):
    rows, cols = _initial_factors(problem, rank, restart, opts.seed)
    state = (0.0, rows, cols, np.zeros((rank, problem.d)))
    value = np.inf
    trace: List[float] = []
    cycles = 0
    for cycles in range(1, opts.max_cycles + 1):
        for update in (problem.update_constant_and_coeffs, problem.update_rows, problem.update_cols):
            candidate = update(*state)
            # ridge solutions are only accepted when they do not increase the objective
            if problem.objective(*candidate) <= problem.objective(*state):
                state = candidate
        constant, rows, cols, coeffs = state
        rows, cols, coeffs = _normalize_factors(rows, cols, coeffs)
        state = (constant, rows, cols, coeffs)
        current = problem.objective(*state)
        trace.append(current)
        converged = np.isfinite(value) and (value - current) <= opts.tol * max(value, np.finfo(float).tiny)
        value = current
        if converged:
            break
    return state, trace, cycles


def fit_broadcasted(
    dataset: Dataset,
    weights,
    rank: Optional[int] = None,
    spec: Optional[SplineSpec] = None,
    opts: Optional[BroadcastOptions] = None,
) -> CPModel:
    """
    Fit the rank-R broadcasted spline model with block-wise descent.

    The default response is w * Y with unit sample weights; the
    weighted-residual convention regresses Y with sample weights w.
    Restarts run concurrently and the lowest final objective wins.
    """
    opts = opts or BroadcastOptions()
    rank = rank if rank is not None else opts.rank
    spec = spec or default_spline()
    dataset.check_finite()
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (dataset.n,) or not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise InputError("weights must be a finite nonnegative vector with one entry per observation")
    if rank < 1:
        raise ParameterError(f"rank must be at least 1, got {rank}")
    required = rank * (dataset.p + dataset.q + spec.dimension)
    if dataset.n <= required:
        raise ParameterError(
            f"n = {dataset.n} is too small for rank {rank}: need n > R(p + q + D) = {required}"
        )

    lower = dataset.treatments.min(axis=0)
    upper = dataset.treatments.max(axis=0)
    features = _entry_features(dataset.treatments, spec, lower, upper)
    if opts.response == ResponseConvention.TRANSFORMED:
        response, sample_weights = weights * dataset.outcomes, np.ones(dataset.n)
    else:
        response, sample_weights = dataset.outcomes, weights

    def run(restart: int):
        problem = _BlockProblem(features, response, sample_weights, opts.ridge)
        state, trace, cycles = _descend(problem, rank, restart, opts)
        return trace[-1], restart, state, trace, cycles, problem.ridge_used

    with ThreadPoolExecutor(max_workers=min(opts.restarts, get_settings().max_workers)) as executor:
        runs = list(executor.map(run, range(opts.restarts)))

    best_value, best_restart, state, trace, cycles, ridge_used = min(runs, key=lambda item: (item[0], item[1]))
    constant, rows, cols, coeffs = state
    model = CPModel(
        constant=constant,
        factors_rows=rows,
        factors_cols=cols,
        spline_coeffs=coeffs,
        spline=spec,
        input_lower=lower,
        input_upper=upper,
        objective_trace=trace,
        ridge_used=ridge_used,
        cycles=cycles,
    )
    fitted = predict_batch(model, dataset.treatments)
    logger.info(
        "broadcast_model_fitted",
        n=dataset.n,
        rank=rank,
        dimension=spec.dimension,
        objective=best_value,
        restart=best_restart,
        cycles=cycles,
        ridge_used=ridge_used,
    )
    return model.model_copy(update={"fitted_values": fitted})


def broadcast_objective(model: CPModel, dataset: Dataset, weights, response: ResponseConvention = ResponseConvention.TRANSFORMED) -> float:
    """Training objective of a model on a dataset under a response convention."""
    weights = np.asarray(weights, dtype=float)
    fitted = predict_batch(model, dataset.treatments)
    if response == ResponseConvention.TRANSFORMED:
        return float(np.sum((weights * dataset.outcomes - fitted) ** 2))
    return float(np.sum(weights * (dataset.outcomes - fitted) ** 2))
