"""Services for moment construction, balancing and effect estimation."""

from .moment_builder import build_moment_system, validate_dataset
from .balancer import solve_weights, solve_exact_entropy, solve_mdabw, tune_delta, weim
from .screening import ball_correlation, rank_covariates, select_subset
from .parametric import fit_linear_effect, sandwich_variance
from .broadcast import fit_broadcasted, predict
from .pipeline import estimate_weights, compare_methods

__all__ = [
    "build_moment_system",
    "validate_dataset",
    "solve_weights",
    "solve_exact_entropy",
    "solve_mdabw",
    "tune_delta",
    "weim",
    "ball_correlation",
    "rank_covariates",
    "select_subset",
    "fit_linear_effect",
    "sandwich_variance",
    "fit_broadcasted",
    "predict",
    "estimate_weights",
    "compare_methods",
]
