"""
Causal Effect Models

Weighted linear dose-response fits, their variance estimates and
bootstrap confidence intervals.
"""

from enum import Enum
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .arrays import FloatArray


class LinearEffectModel(BaseModel):
    """s(T; beta) = intercept + <B, T>."""
    intercept: float
    coefficient_matrix: FloatArray
    fitted_values: FloatArray
    residuals: FloatArray
    column_names: List[str] = Field(default_factory=list, description="intercept, t_1_1 ... t_p_q")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def coefficients(self) -> np.ndarray:
        """beta = (intercept, row-major vec(B))."""
        return np.concatenate([[self.intercept], self.coefficient_matrix.ravel()])

    def predict(self, treatments: np.ndarray) -> np.ndarray:
        treatments = np.asarray(treatments, dtype=float)
        return self.intercept + np.einsum("iab,ab->i", treatments, self.coefficient_matrix)


class VarianceMethod(str, Enum):
    SANDWICH = "sandwich"


class VarianceEstimate(BaseModel):
    """Coefficient covariance V/n and standard errors."""
    covariance: FloatArray
    standard_errors: FloatArray
    method: VarianceMethod

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class ConfidenceInterval(BaseModel):
    name: str
    estimate: float
    lower: float
    upper: float


class BootstrapSummary(BaseModel):
    """Percentile intervals from a full-pipeline bootstrap."""
    intervals: List[ConfidenceInterval]
    level: float
    replicates: int
    failed: int
    seed: int
    draws: FloatArray = Field(..., description="successful replicate coefficients, one row per replicate")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def table_rows(self) -> List[dict]:
        return [interval.model_dump() for interval in self.intervals]
