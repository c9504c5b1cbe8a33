"""
Balancing Models

Solver configuration and results for the weighted Euclidean balancing
dual and its comparators.
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..config import get_settings
from .arrays import FloatArray


class DualForm(str, Enum):
    """Which dual the solver minimizes."""
    NORMALIZED = "normalized"   # mean-one multiplier profiled out: log-mean-exp data term
    CONJUGATE = "conjugate"     # sum of exp(M~theta - 1), weights renormalized afterwards


class BalanceConfig(BaseModel):
    """Configuration for one dual solve."""
    delta: float = Field(0.0, ge=0.0, description="WEIM threshold")
    max_iterations: int = Field(default_factory=lambda: get_settings().max_iterations, gt=0)
    gradient_tolerance: float = Field(default_factory=lambda: get_settings().gradient_tolerance, gt=0.0)
    convergence_tolerance: float = Field(default_factory=lambda: get_settings().convergence_tolerance, gt=0.0)
    smoothing_epsilon: float = Field(default_factory=lambda: get_settings().smoothing_epsilon, ge=0.0)
    normalize_weights: bool = True
    dual_form: DualForm = DualForm.NORMALIZED

    model_config = ConfigDict(frozen=True)

    def with_delta(self, delta: float) -> "BalanceConfig":
        return self.model_copy(update={"delta": float(delta)})


class BalanceResult(BaseModel):
    """
    Dual solution and recovered weights.

    weights are strictly positive; with normalize_weights they have mean one.
    """
    method: str = "webm"
    theta: FloatArray
    weights: FloatArray
    weim: float
    delta_used: float
    imbalance: FloatArray = Field(..., description="per-column mean imbalance (1/n) M~' w")
    objective_trace: List[float] = Field(default_factory=list)
    converged: bool
    iterations: int = 0
    gradient_norm: float = 0.0
    dual_value: float = Field(0.0, description="optimal value of the concave dual (equals the primal optimum)")
    effective_sample_size: float

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def summary(self) -> dict:
        """Scalar fields, for logs and JSON documents."""
        return {
            "method": self.method,
            "delta_used": self.delta_used,
            "weim": self.weim,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "dual_value": self.dual_value,
            "effective_sample_size": self.effective_sample_size,
        }


def effective_sample_size(weights: np.ndarray) -> float:
    """(sum w)^2 / sum w^2."""
    weights = np.asarray(weights, dtype=float)
    return float(weights.sum() ** 2 / np.dot(weights, weights))


class TuningPoint(BaseModel):
    """One delta of the tuning path."""
    delta: float
    weim: Optional[float] = None
    effective_sample_size: Optional[float] = None
    converged: bool = False
    error: Optional[str] = None


class TuningResult(BaseModel):
    """Selected delta plus the full (delta, WEIM, ESS) path."""
    delta_star: float
    best: BalanceResult
    path: List[TuningPoint]
    results: List[Optional[BalanceResult]] = Field(
        default_factory=list,
        description="solver result per grid point, None where the solve failed"
    )
    grid_extended: bool = Field(False, description="the default grid was infeasible and was extended upward")
    minimum_weim: Optional[float] = Field(None, description="smallest WEIM over nonnegative mean-one weights, when computed")
    at_upper_edge: bool = Field(False, description="delta_star is the largest delta of the grid that was searched")

    model_config = ConfigDict(arbitrary_types_allowed=True)
