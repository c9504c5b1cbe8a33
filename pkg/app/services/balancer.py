"""
Balancer Service

Weighted Euclidean imbalance, the penalized entropy-balancing dual and its
solvers: WEBM (Euclidean-norm penalty), exact entropy balancing and the
per-constraint (L1) approximate balancing comparator.

The default solve minimizes the normalized dual

    F(theta) = log((1/n) sum_i exp(M~_i' theta)) + sqrt(delta) ||theta||

whose minimizer yields mean-one weights w = n softmax(M~ theta) satisfying
WEIM(w) <= delta. The literal conjugate form sum_i exp(M~_i' theta - 1)
is available through DualForm.CONJUGATE.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog, minimize, nnls
from scipy.special import logsumexp, softmax

from ..config import get_settings
from ..core.exceptions import DivergingDualError, ParameterError, TuningFailedError, InputError
from ..core.logging import get_logger
from ..models.balance import (
    BalanceConfig,
    BalanceResult,
    DualForm,
    TuningPoint,
    TuningResult,
    effective_sample_size,
)
from ..models.moments import MomentSystem

logger = get_logger(__name__)

EXP_LIMIT = 700.0
THETA_LIMIT = 1e6
FEASIBILITY_MARGIN = 1e-9
SUM_PENALTY = 1e3
EXTENSION_START = 1.05
EXTENSION_SPAN = 10.0


# =============================================================================
# Imbalance
# =============================================================================

def mean_imbalance(weights, ms: MomentSystem) -> np.ndarray:
    """Per-column mean imbalance (1/n) M~' w."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (ms.n,):
        raise InputError(f"weights have shape {weights.shape}, expected ({ms.n},)")
    if not np.all(np.isfinite(weights)):
        raise InputError("weights must be finite")
    return ms.matrix.T @ weights / ms.n


def weim(weights, ms: MomentSystem) -> float:
    """Weighted Euclidean imbalance: squared norm of the mean imbalance vector."""
    imbalance = mean_imbalance(weights, ms)
    return float(imbalance @ imbalance)


# =============================================================================
# Dual objectives
# =============================================================================

def _penalty(theta: np.ndarray, delta: float, epsilon: float) -> Tuple[float, np.ndarray]:
    root = np.sqrt(delta)
    norm = np.linalg.norm(theta)
    return root * norm, root * theta / max(norm, epsilon)


def _penalty_hessian(theta: np.ndarray, delta: float, epsilon: float) -> np.ndarray:
    k = theta.size
    norm = np.linalg.norm(theta)
    if delta == 0.0 or norm <= epsilon:
        return np.zeros((k, k))
    return np.sqrt(delta) * (np.eye(k) / norm - np.outer(theta, theta) / norm ** 3)


def dual_objective(
    theta,
    ms: MomentSystem,
    delta: float,
    epsilon: Optional[float] = None,
) -> Tuple[float, np.ndarray]:
    """
    Conjugate dual sum_i exp(M~_i' theta - 1) + sqrt(delta) ||theta|| and its gradient.

    Raises DivergingDualError when an exponent exceeds 700.
    """
    if epsilon is None:
        epsilon = get_settings().smoothing_epsilon
    theta = np.asarray(theta, dtype=float)
    z = ms.matrix @ theta - 1.0
    if not np.all(np.isfinite(z)) or z.max() > EXP_LIMIT:
        raise DivergingDualError(
            f"dual exponent reached {np.nanmax(z):.1f} (limit {EXP_LIMIT:g}); "
            "the balancing system is infeasible or badly scaled"
        )
    e = np.exp(z)
    penalty, penalty_grad = _penalty(theta, delta, epsilon)
    return float(e.sum() + penalty), ms.matrix.T @ e + penalty_grad


def normalized_dual_objective(
    theta,
    ms: MomentSystem,
    delta: float,
    epsilon: Optional[float] = None,
) -> Tuple[float, np.ndarray]:
    """log-mean-exp(M~ theta) + sqrt(delta) ||theta|| and its gradient."""
    if epsilon is None:
        epsilon = get_settings().smoothing_epsilon
    theta = np.asarray(theta, dtype=float)
    z = ms.matrix @ theta
    if not np.all(np.isfinite(z)):
        raise DivergingDualError("dual exponents are not finite")
    lse = logsumexp(z)
    probabilities = np.exp(z - lse)
    penalty, penalty_grad = _penalty(theta, delta, epsilon)
    value = lse - np.log(ms.n) + penalty
    return float(value), ms.matrix.T @ probabilities + penalty_grad


def normalized_dual_hessian(theta, ms: MomentSystem, delta: float, epsilon: Optional[float] = None) -> np.ndarray:
    if epsilon is None:
        epsilon = get_settings().smoothing_epsilon
    theta = np.asarray(theta, dtype=float)
    probabilities = softmax(ms.matrix @ theta)
    mean_row = ms.matrix.T @ probabilities
    data = ms.matrix.T @ (probabilities[:, None] * ms.matrix) - np.outer(mean_row, mean_row)
    return data + _penalty_hessian(theta, delta, epsilon)


def _conjugate_hessian(theta, ms: MomentSystem, delta: float, epsilon: float) -> np.ndarray:
    e = np.exp(np.minimum(ms.matrix @ theta - 1.0, EXP_LIMIT))
    return ms.matrix.T @ (e[:, None] * ms.matrix) + _penalty_hessian(theta, delta, epsilon)


def _clipped_conjugate(theta, ms: MomentSystem, delta: float, epsilon: float) -> Tuple[float, np.ndarray]:
    # line-search trial points may overshoot; the final iterate is re-checked unclipped
    e = np.exp(np.minimum(ms.matrix @ theta - 1.0, EXP_LIMIT))
    penalty, penalty_grad = _penalty(theta, delta, epsilon)
    return float(e.sum() + penalty), ms.matrix.T @ e + penalty_grad


def primal_weights(theta, ms: MomentSystem) -> np.ndarray:
    """Pre-normalization weights exp(M~ theta - 1)."""
    return np.exp(ms.matrix @ np.asarray(theta, dtype=float) - 1.0)


def exact_balance_feasible(ms: MomentSystem, margin: float = FEASIBILITY_MARGIN) -> bool:
    """
    Whether strictly positive mean-one weights can zero every mean imbalance.

    Solved as the linear program max s s.t. M~'w = 0, sum w = n, w_i >= s.
    """
    n, k = ms.matrix.shape
    cost = np.zeros(n + 1)
    cost[-1] = -1.0
    a_eq = np.zeros((k + 1, n + 1))
    a_eq[:k, :n] = ms.matrix.T
    a_eq[k, :n] = 1.0
    b_eq = np.zeros(k + 1)
    b_eq[k] = n
    a_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    bounds = [(0.0, None)] * n + [(0.0, 1.0)]
    result = linprog(cost, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs")
    return result.status == 0 and -result.fun > margin


def minimum_weim(ms: MomentSystem) -> Tuple[float, np.ndarray]:
    """
    Smallest WEIM reachable by nonnegative mean-one weights, and those weights.

    Nonnegative least squares on the mean-imbalance rows plus a heavily
    weighted sum-to-n row; the solution is rescaled to mean one.
    """
    n = ms.n
    system = np.vstack([ms.matrix.T / n, np.full((1, n), SUM_PENALTY / n)])
    target = np.zeros(system.shape[0])
    target[-1] = SUM_PENALTY
    weights, _ = nnls(system, target, maxiter=50 * n)
    total = weights.sum()
    if total <= 0.0:
        raise DivergingDualError("no nonnegative weights with a positive sum were found")
    weights = weights * n / total
    return weim(weights, ms), weights


def _kkt_scale(origin_gradient: np.ndarray) -> float:
    """Residuals are judged relative to the gradient at uniform weights."""
    return 1.0 + float(np.linalg.norm(origin_gradient))


# =============================================================================
# Solvers
# =============================================================================

def _minimize_smooth(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    hessian: Callable[[np.ndarray], np.ndarray],
    k: int,
    cfg: BalanceConfig,
) -> Tuple[np.ndarray, List[float], int, float]:
    """BFGS from the origin, then a trust-region Newton polish if the gradient is still large."""
    theta0 = np.zeros(k)
    trace = [objective(theta0)[0]]

    def record(xk):
        trace.append(objective(xk)[0])

    result = minimize(
        objective,
        theta0,
        jac=True,
        method="BFGS",
        callback=record,
        options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance},
    )
    theta = result.x
    iterations = int(result.nit)
    value, gradient = objective(theta)
    grad_norm = float(np.linalg.norm(gradient))

    if grad_norm >= cfg.gradient_tolerance and np.all(np.isfinite(theta)):
        polish = minimize(
            objective,
            theta,
            jac=True,
            hess=hessian,
            method="trust-exact",
            callback=record,
            options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance},
        )
        iterations += int(polish.nit)
        polished_value, polished_gradient = objective(polish.x)
        if polished_value <= value:
            theta = polish.x
            grad_norm = float(np.linalg.norm(polished_gradient))

    return theta, trace, iterations, grad_norm


def _check_divergence(theta: np.ndarray, ms: MomentSystem, converged: bool, method: str) -> None:
    if converged:
        return
    z = ms.matrix @ theta
    if not np.all(np.isfinite(z)) or np.ptp(z) > EXP_LIMIT or np.linalg.norm(theta) > THETA_LIMIT:
        raise DivergingDualError(
            f"{method} dual diverged (|theta| = {np.linalg.norm(theta):.3g}); "
            "the balancing constraints cannot be met by positive weights"
        )


def _build_result(
    method: str,
    theta: np.ndarray,
    ms: MomentSystem,
    delta_used: float,
    trace: List[float],
    converged: bool,
    iterations: int,
    grad_norm: float,
    dual_value: float,
    normalize: bool,
) -> BalanceResult:
    z = ms.matrix @ theta
    if normalize:
        weights = ms.n * softmax(z)
    else:
        weights = np.exp(z - 1.0)
    imbalance = mean_imbalance(weights, ms)
    result = BalanceResult(
        method=method,
        theta=theta,
        weights=weights,
        weim=float(imbalance @ imbalance),
        delta_used=delta_used,
        imbalance=imbalance,
        objective_trace=[float(v) for v in trace],
        converged=converged,
        iterations=iterations,
        gradient_norm=grad_norm,
        dual_value=dual_value,
        effective_sample_size=effective_sample_size(weights),
    )
    logger.info(
        "weights_solved",
        method=method,
        n=ms.n,
        k=ms.k_effective,
        delta=delta_used,
        weim=result.weim,
        converged=converged,
        iterations=iterations,
    )
    return result


def solve_weights(ms: MomentSystem, cfg: Optional[BalanceConfig] = None, method: str = "webm") -> BalanceResult:
    """
    Minimize the penalized dual and recover the balancing weights.

    The optimizer aims at cfg.gradient_tolerance; the result counts as
    converged when the gradient norm is within cfg.convergence_tolerance of
    the scale set by the uniform-weight gradient. Otherwise the best iterate
    comes back with converged=False; a dual running off to infinity raises
    DivergingDualError.
    """
    cfg = cfg or BalanceConfig()
    delta = cfg.delta
    epsilon = cfg.smoothing_epsilon
    k = ms.k_effective

    if delta == 0.0 and not exact_balance_feasible(ms):
        raise DivergingDualError(
            f"exact balance of {k} constraints is infeasible for positive weights on {ms.n} observations"
        )

    if cfg.dual_form == DualForm.NORMALIZED:
        objective = lambda t: normalized_dual_objective(t, ms, delta, epsilon)
        hessian = lambda t: normalized_dual_hessian(t, ms, delta, epsilon)
        origin_gradient = ms.matrix.mean(axis=0)
    else:
        objective = lambda t: _clipped_conjugate(t, ms, delta, epsilon)
        hessian = lambda t: _conjugate_hessian(t, ms, delta, epsilon)
        origin_gradient = np.exp(-1.0) * ms.matrix.sum(axis=0)

    # theta = 0 is optimal when the data gradient fits inside the sqrt(delta) ball
    if np.linalg.norm(origin_gradient) <= np.sqrt(delta) + cfg.gradient_tolerance:
        theta = np.zeros(k)
        value = objective(theta)[0]
        return _build_result(
            method, theta, ms, delta, [value], True, 0,
            float(max(np.linalg.norm(origin_gradient) - np.sqrt(delta), 0.0)),
            _dual_value(value, ms, cfg.dual_form), cfg.normalize_weights,
        )

    theta, trace, iterations, grad_norm = _minimize_smooth(objective, hessian, k, cfg)
    converged = grad_norm <= cfg.convergence_tolerance * _kkt_scale(origin_gradient)
    _check_divergence(theta, ms, converged, method)

    if cfg.dual_form == DualForm.CONJUGATE:
        value = dual_objective(theta, ms, delta, epsilon)[0]
    else:
        value = objective(theta)[0]

    if not converged:
        logger.warning("dual_not_converged", method=method, gradient_norm=grad_norm, iterations=iterations)

    return _build_result(
        method, theta, ms, delta, trace, converged, iterations, grad_norm,
        _dual_value(value, ms, cfg.dual_form), cfg.normalize_weights,
    )


def _dual_value(value: float, ms: MomentSystem, form: DualForm) -> float:
    """Optimal primal entropy sum w log w implied by the dual minimum."""
    if form == DualForm.NORMALIZED:
        return -ms.n * value
    return -value


def solve_exact_entropy(ms: MomentSystem, cfg: Optional[BalanceConfig] = None) -> BalanceResult:
    """Entropy balancing with every mean imbalance forced to zero."""
    cfg = (cfg or BalanceConfig()).with_delta(0.0)
    return solve_weights(ms, cfg, method="eb")


def default_mdabw_deltas(ms: MomentSystem, scale: Optional[float] = None) -> np.ndarray:
    """delta_k = c / sqrt(n) for every constraint."""
    if scale is None:
        scale = get_settings().mdabw_scale
    return np.full(ms.k_effective, scale / np.sqrt(ms.n))


def _soft_threshold(x: np.ndarray, threshold: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - threshold, 0.0)


def solve_mdabw(
    ms: MomentSystem,
    per_constraint_deltas: Optional[Sequence[float]] = None,
    cfg: Optional[BalanceConfig] = None,
) -> BalanceResult:
    """
    Per-constraint approximate balancing: |mean imbalance_k| <= delta_k.

    Minimizes log-mean-exp(M~ theta) + sum_k delta_k |theta_k| by monotone
    accelerated proximal gradient with backtracking, followed by a Newton
    polish on the active set.
    """
    cfg = cfg or BalanceConfig()
    k = ms.k_effective
    deltas = default_mdabw_deltas(ms) if per_constraint_deltas is None else np.asarray(per_constraint_deltas, dtype=float)
    if deltas.shape != (k,):
        raise ParameterError(f"expected {k} per-constraint deltas, got shape {deltas.shape}")
    if np.any(deltas < 0) or not np.all(np.isfinite(deltas)):
        raise ParameterError("per-constraint deltas must be finite and nonnegative")

    if np.all(deltas == 0.0) and not exact_balance_feasible(ms):
        raise DivergingDualError(
            f"exact balance of {k} constraints is infeasible for positive weights on {ms.n} observations"
        )

    def smooth(theta):
        return normalized_dual_objective(theta, ms, 0.0, cfg.smoothing_epsilon)

    def full(theta):
        return smooth(theta)[0] + float(deltas @ np.abs(theta))

    theta = np.zeros(k)
    origin_gradient = smooth(theta)[1]
    if np.all(np.abs(origin_gradient) <= deltas + cfg.gradient_tolerance):
        value = full(theta)
        return _build_result("mdabw", theta, ms, float(deltas.max()), [value], True, 0, 0.0,
                             -ms.n * value, cfg.normalize_weights)

    row_norms = np.einsum("ij,ij->i", ms.matrix, ms.matrix)
    step = 1.0 / max(float(row_norms.max()), 1e-12)

    def residual(theta):
        gradient = smooth(theta)[1]
        mapped = _soft_threshold(theta - step * gradient, step * deltas)
        return float(np.linalg.norm(theta - mapped) / step)

    value = full(theta)
    trace = [value]
    y = theta.copy()
    momentum = 1.0
    reached_target = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        f_y, g_y = smooth(y)
        while True:
            candidate = _soft_threshold(y - step * g_y, step * deltas)
            diff = candidate - y
            if smooth(candidate)[0] <= f_y + g_y @ diff + diff @ diff / (2.0 * step) + 1e-15:
                break
            step *= 0.5
        candidate_value = full(candidate)
        previous = theta
        if candidate_value <= value:
            theta, value = candidate, candidate_value
        next_momentum = (1.0 + np.sqrt(1.0 + 4.0 * momentum ** 2)) / 2.0
        y = theta + (momentum / next_momentum) * (candidate - theta) \
            + ((momentum - 1.0) / next_momentum) * (theta - previous)
        momentum = next_momentum
        trace.append(value)
        if residual(theta) < cfg.gradient_tolerance:
            reached_target = True
            break

    if not reached_target:
        theta, value = _polish_active_set(theta, value, ms, deltas, cfg, full)
        trace.append(value)

    converged = residual(theta) <= cfg.convergence_tolerance * _kkt_scale(origin_gradient)
    _check_divergence(theta, ms, converged, "mdabw")
    if not converged:
        logger.warning("dual_not_converged", method="mdabw", iterations=iterations)

    return _build_result(
        "mdabw", theta, ms, float(deltas.max()), trace, converged, iterations,
        residual(theta), -ms.n * value, cfg.normalize_weights,
    )


def _polish_active_set(theta, value, ms, deltas, cfg, full):
    """Newton solve restricted to the current support with the signs held fixed."""
    free = (theta != 0.0) | (deltas == 0.0)
    if not free.any():
        return theta, value
    signs = np.sign(theta[free])
    linear = deltas[free] * signs
    sub = ms.matrix[:, free]

    def objective(phi):
        z = sub @ phi
        lse = logsumexp(z)
        probabilities = np.exp(z - lse)
        return float(lse - np.log(ms.n) + linear @ phi), sub.T @ probabilities + linear

    def hessian(phi):
        probabilities = softmax(sub @ phi)
        mean_row = sub.T @ probabilities
        return sub.T @ (probabilities[:, None] * sub) - np.outer(mean_row, mean_row)

    result = minimize(objective, theta[free], jac=True, hess=hessian, method="trust-exact",
                      options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance})
    candidate = theta.copy()
    candidate[free] = result.x
    penalized = deltas[free] > 0
    if np.all(np.sign(result.x[penalized]) == signs[penalized]):
        candidate_value = full(candidate)
        if candidate_value <= value:
            theta, value = candidate, candidate_value
    return theta, value


# =============================================================================
# Delta tuning
# =============================================================================

def default_delta_grid(ms: MomentSystem, size: Optional[int] = None) -> List[float]:
    """Logarithmic grid from 1e-4 to 1, scaled by K_effective / n."""
    size = size or get_settings().delta_grid_size
    scale = ms.k_effective / ms.n
    return [float(v) for v in np.logspace(-4.0, 0.0, size) * scale]


def extended_delta_grid(floor: float, size: Optional[int] = None) -> List[float]:
    """Geometric grid from just above the minimum achievable WEIM up to ten times it."""
    size = size or get_settings().delta_grid_size
    return [float(v) for v in floor * np.geomspace(EXTENSION_START, EXTENSION_SPAN, size)]


def _solve_grid(ms: MomentSystem, grid: Sequence[float], cfg: BalanceConfig):
    def solve_point(delta: float):
        try:
            return solve_weights(ms, cfg.with_delta(delta)), None
        except DivergingDualError as exc:
            return None, exc.message

    with ThreadPoolExecutor(max_workers=get_settings().max_workers) as executor:
        return list(executor.map(solve_point, grid))


def tune_delta(
    ms: MomentSystem,
    grid: Optional[Sequence[float]] = None,
    cfg: Optional[BalanceConfig] = None,
) -> TuningResult:
    """
    Solve at every grid delta and select the one with the smallest WEIM.

    Ties go to the larger delta. Diverging grid points are excluded. When
    every point of the default grid diverges, the grid is rebuilt upward
    from the minimum WEIM that nonnegative mean-one weights can reach; an
    explicit grid is never extended. If nothing solves, TuningFailedError
    carries the per-delta reasons.
    """
    cfg = cfg or BalanceConfig()
    extendable = grid is None
    grid = default_delta_grid(ms) if grid is None else [float(d) for d in grid]
    if not grid:
        raise ParameterError("delta grid is empty")
    if any(d <= 0 or not np.isfinite(d) for d in grid):
        raise ParameterError(f"delta grid entries must be positive and finite: {grid}")

    outcomes = _solve_grid(ms, grid, cfg)
    failures = {d: e for d, (r, e) in zip(grid, outcomes) if r is None}
    floor: Optional[float] = None
    extended = False

    if len(failures) == len(grid) and extendable:
        floor, _ = minimum_weim(ms)
        if floor > 0.0:
            grid = extended_delta_grid(floor, len(grid))
            outcomes = _solve_grid(ms, grid, cfg)
            failures.update({d: e for d, (r, e) in zip(grid, outcomes) if r is None})
            extended = True
            logger.warning("delta_grid_extended", minimum_weim=floor, low=grid[0], high=grid[-1])

    path: List[TuningPoint] = []
    results: List[Optional[BalanceResult]] = []
    for delta, (result, error) in zip(grid, outcomes):
        results.append(result)
        if result is None:
            path.append(TuningPoint(delta=delta, error=error))
        else:
            path.append(TuningPoint(
                delta=delta,
                weim=result.weim,
                effective_sample_size=result.effective_sample_size,
                converged=result.converged,
            ))

    solved = [(d, r) for d, r in zip(grid, results) if r is not None]
    if not solved:
        raise TuningFailedError(failures)
    candidates = [(d, r) for d, r in solved if r.converged] or solved

    best_weim = min(r.weim for _, r in candidates)
    tie = 1e-12 * (1.0 + best_weim)
    delta_star, best = max(((d, r) for d, r in candidates if r.weim <= best_weim + tie), key=lambda item: item[0])
    at_upper_edge = delta_star == max(grid)

    logger.info(
        "delta_tuned",
        delta_star=delta_star,
        weim=best.weim,
        grid_size=len(grid),
        failed=len(grid) - len(solved),
        grid_extended=extended,
    )
    if at_upper_edge:
        logger.warning("delta_at_grid_top", delta_star=delta_star, weim=best.weim)
    return TuningResult(
        delta_star=delta_star,
        best=best,
        path=path,
        results=results,
        grid_extended=extended,
        minimum_weim=floor,
        at_upper_edge=at_upper_edge,
    )
