"""
Scenario Service

Data-generating processes of the six simulation scenarios, their oracle
stabilized weights and true dose-response surfaces, plus the
application-shaped synthetic sample and the weight-quality diagnostics.
"""

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress, multivariate_normal

from ..core.exceptions import InputError, ParameterError, UnsupportedDGPError
from ..core.logging import get_logger
from ..models.dataset import BasisSpec, CovariateBasis, Dataset
from ..models.study import AssignmentModel, WeightedObjectiveCheck, ScenarioTruth

logger = get_logger(__name__)

# maps each confounder to the 3 x 2 treatment
CONFOUNDER_LOADING = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
TRUE_B = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

COVARIATE_DIMS = {1: 5, 2: 5, 3: 5, 4: 5, 5: 49, 6: 99}
CONFOUNDER_MEANS = {1: 3.0, 2: 2.0, 3: 3.0, 4: 2.0, 5: 0.0, 6: 0.0}
SCENARIO_BASES = {
    1: CovariateBasis.LINEAR_PLUS_SQUARES,
    2: CovariateBasis.LINEAR_PLUS_INTERACTIONS,
    3: CovariateBasis.LINEAR_PLUS_SQUARES,
    4: CovariateBasis.LINEAR_PLUS_INTERACTIONS,
    5: CovariateBasis.LINEAR,
    6: CovariateBasis.LINEAR,
}


def scenario_truth(scenario_id: int) -> ScenarioTruth:
    """Ground truth of scenario 1..6."""
    if scenario_id not in COVARIATE_DIMS:
        raise ParameterError(f"unknown scenario {scenario_id}; expected 1..6")
    confounders = 3 if scenario_id <= 4 else 5
    return ScenarioTruth(
        scenario_id=scenario_id,
        true_B=TRUE_B,
        assignment_matrices=np.stack([CONFOUNDER_LOADING] * confounders),
        covariate_dim=COVARIATE_DIMS[scenario_id],
        nonlinear=scenario_id in (3, 4),
        confounder_mean=CONFOUNDER_MEANS[scenario_id],
        basis=BasisSpec(covariate_basis=SCENARIO_BASES[scenario_id]),
        screening=scenario_id in (5, 6),
    )


def f1(values: np.ndarray) -> np.ndarray:
    """Entry-wise nonlinear transform t + 0.6 sin(2 pi (t - 0.5)^2)."""
    return values + 0.6 * np.sin(2.0 * np.pi * (values - 0.5) ** 2)


def confounding_terms(scenario_id: int, covariates: np.ndarray) -> np.ndarray:
    x = covariates
    if scenario_id in (1, 3):
        return x[:, 0] + (x[:, 1] + 1.0) ** 2 + x[:, 3] ** 2
    if scenario_id in (2, 4):
        pairs = sum(x[:, j] * x[:, k] for j in range(5) for k in range(j + 1, 5))
        return x[:, 1] + x[:, 2] + pairs
    return x[:, :5].sum(axis=1)


def covariate_covariance(dim: int, covariance: float = 0.2) -> np.ndarray:
    sigma = np.full((dim, dim), covariance)
    np.fill_diagonal(sigma, 1.0)
    return sigma


def _draw_covariates(rng: np.random.Generator, n: int, truth: ScenarioTruth) -> np.ndarray:
    sigma = covariate_covariance(truth.covariate_dim, truth.covariance)
    return rng.multivariate_normal(np.zeros(truth.covariate_dim), sigma, size=n, method="cholesky")


def _assign_treatments(rng: np.random.Generator, covariates: np.ndarray, truth: ScenarioTruth, noiseless: bool) -> np.ndarray:
    m = truth.assignment_matrices.shape[0]
    noise = rng.standard_normal((covariates.shape[0],) + truth.true_B.shape) * truth.treatment_noise_sd
    if noiseless:
        noise = np.zeros_like(noise)
    return np.einsum("im,mab->iab", covariates[:, :m], truth.assignment_matrices) + noise


def dose_response(treatments: np.ndarray, truth: ScenarioTruth) -> np.ndarray:
    """1 + <B, F(T)> with F the identity or the nonlinear transform."""
    transformed = f1(treatments) if truth.nonlinear else treatments
    return 1.0 + np.einsum("iab,ab->i", transformed, truth.true_B)


def true_surface(treatments, truth: ScenarioTruth) -> np.ndarray:
    """E[Y(t)]: dose response plus the population mean of the confounding terms."""
    return dose_response(np.asarray(treatments, dtype=float), truth) + truth.confounder_mean


def generate_scenario(scenario_id: int, n: int, seed, noiseless: bool = False) -> Tuple[Dataset, ScenarioTruth]:
    """
    Draw n observations of scenario 1..6.

    X ~ N(0, Sigma) with unit variances and 0.2 covariances, T from the
    linear assignment with standard normal errors, Y with N(0, 2^2) noise.
    noiseless zeroes both error terms (the draws still happen so streams align).
    """
    truth = scenario_truth(scenario_id)
    if n < 10:
        raise ParameterError(f"scenario samples need n >= 10, got {n}")
    rng = np.random.default_rng(seed)
    covariates = _draw_covariates(rng, n, truth)
    treatments = _assign_treatments(rng, covariates, truth, noiseless)
    noise = rng.normal(0.0, truth.outcome_noise_sd, size=n)
    if noiseless:
        noise = np.zeros(n)
    outcomes = dose_response(treatments, truth) + confounding_terms(scenario_id, covariates) + noise
    return Dataset(treatments=treatments, covariates=covariates, outcomes=outcomes), truth


def oracle_weights(dataset: Dataset, truth: ScenarioTruth) -> np.ndarray:
    """
    Stabilized weights f(T) / f(T | X) from the exact Gaussian densities.

    vec(T) | X ~ N(A x, s^2 I) and vec(T) ~ N(0, A Sigma A' + s^2 I),
    with A stacking vec(B_j) over the confounders.
    """
    if truth.assignment_model != AssignmentModel.LINEAR_GAUSSIAN:
        raise UnsupportedDGPError(
            f"oracle weights need a linear-Gaussian assignment model, got {truth.assignment_model.value}"
        )
    m = truth.assignment_matrices.shape[0]
    if dataset.n_covariates < m:
        raise InputError(f"assignment uses {m} covariates but the dataset has {dataset.n_covariates}")
    n = dataset.n
    vec_t = dataset.treatments.transpose(0, 2, 1).reshape(n, -1)
    loading = truth.assignment_matrices.transpose(0, 2, 1).reshape(m, -1).T
    dim = vec_t.shape[1]
    noise_cov = truth.treatment_noise_sd ** 2 * np.eye(dim)
    sigma = covariate_covariance(m, truth.covariance)
    marginal_cov = loading @ sigma @ loading.T + noise_cov

    log_marginal = multivariate_normal(mean=np.zeros(dim), cov=marginal_cov).logpdf(vec_t)
    residual = vec_t - dataset.covariates[:, :m] @ loading.T
    log_conditional = multivariate_normal(mean=np.zeros(dim), cov=noise_cov).logpdf(residual)
    return np.exp(np.atleast_1d(log_marginal - log_conditional))


# =============================================================================
# Application-shaped sample
# =============================================================================

APPLICATION_B = np.array([
    [0.8, 0.0, -0.5, 0.3, 0.0],
    [0.0, 0.6, 0.0, -0.4, 0.5],
])


def generate_application_like(n: int = 103, seed=0) -> Tuple[Dataset, ScenarioTruth]:
    """
    2 x 5 non-negative weekly-hours treatment confounded by one binary and
    two ordinal covariates, with a linear outcome.
    """
    if n < 10:
        raise ParameterError(f"application sample needs n >= 10, got {n}")
    rng = np.random.default_rng(seed)
    binary = rng.integers(0, 2, size=n).astype(float)
    education = rng.integers(1, 6, size=n).astype(float)
    income = rng.integers(1, 5, size=n).astype(float)
    covariates = np.column_stack([binary, education, income])

    base = np.array([[3.0, 2.0, 1.5, 1.0, 2.5], [2.0, 1.0, 3.0, 1.5, 0.5]])
    drive = 0.6 * binary[:, None, None] + 0.3 * (education - 3.0)[:, None, None] \
        + 0.4 * (income - 2.5)[:, None, None]
    treatments = np.maximum(base + drive + rng.normal(0.0, 1.0, size=(n, 2, 5)), 0.0)

    outcomes = (
        100.0
        + np.einsum("iab,ab->i", treatments, APPLICATION_B)
        + 3.0 * binary + 2.0 * education + 1.5 * income
        + rng.normal(0.0, 2.0, size=n)
    )
    truth = ScenarioTruth(
        scenario_id=0,
        true_B=APPLICATION_B,
        assignment_matrices=np.zeros((3, 2, 5)),
        covariate_dim=3,
        confounder_mean=float(3.0 * 0.5 + 2.0 * 3.0 + 1.5 * 2.5),
        assignment_model=AssignmentModel.EXTERNAL,
    )
    return Dataset(treatments=treatments, covariates=covariates, outcomes=outcomes), truth


# =============================================================================
# Diagnostics
# =============================================================================

def weighted_objective_check(scenario_id: int, n: int, seed, intercept: Optional[float] = None) -> WeightedObjectiveCheck:
    """
    Compare (1/n) sum w* (Y - s(T))^2 with a Monte-Carlo estimate of the
    treatment-averaged potential-outcome risk, s(T) = c + <B, T>.

    The direct side draws treatments from their marginal and independent
    covariates and noise, so each Y(t) is a potential outcome at t.
    """
    observed_seed, treatment_seed, outcome_seed = np.random.SeedSequence(seed).spawn(3)
    dataset, truth = generate_scenario(scenario_id, n, observed_seed)
    c = 1.0 + truth.confounder_mean if intercept is None else intercept

    def linear(treatments):
        return c + np.einsum("iab,ab->i", treatments, truth.true_B)

    weights = oracle_weights(dataset, truth)
    weighted = float(np.mean(weights * (dataset.outcomes - linear(dataset.treatments)) ** 2))

    fresh, _ = generate_scenario(scenario_id, n, treatment_seed)
    rng = np.random.default_rng(outcome_seed)
    covariates = _draw_covariates(rng, n, truth)
    noise = rng.normal(0.0, truth.outcome_noise_sd, size=n)
    potential = dose_response(fresh.treatments, truth) + confounding_terms(scenario_id, covariates) + noise
    direct = float(np.mean((potential - linear(fresh.treatments)) ** 2))

    logger.info("weighted_objective_check", scenario=scenario_id, n=n, weighted=weighted, direct=direct)
    return WeightedObjectiveCheck(weighted_objective=weighted, direct_estimate=direct)


def weight_error(estimated, oracle) -> float:
    """(1/n) sum (w_hat - w*)^2."""
    estimated = np.asarray(estimated, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    if estimated.shape != oracle.shape:
        raise InputError(f"weight vectors differ in shape: {estimated.shape} vs {oracle.shape}")
    return float(np.mean((estimated - oracle) ** 2))


def log_log_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(value) on log(n)."""
    return float(linregress(np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(values, dtype=float))).slope)
