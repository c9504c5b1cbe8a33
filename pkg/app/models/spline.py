"""
Spline and CP Models

Spline specification, fitting options and the rank-R broadcasted
CP model of the nonparametric dose-response estimator.
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..config import get_settings
from .arrays import FloatArray


class SplineSpec(BaseModel):
    """Order and interior knots of a spline on [0, 1]."""
    order: int = Field(4, ge=2)
    interior_knots: List[float] = Field(default_factory=list)

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_knots(self) -> "SplineSpec":
        knots = self.interior_knots
        if any(not 0.0 < k < 1.0 for k in knots):
            raise ValueError("interior knots must lie strictly inside (0, 1)")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise ValueError("interior knots must be strictly increasing")
        return self

    @property
    def dimension(self) -> int:
        """D = order + number of interior knots."""
        return self.order + len(self.interior_knots)

    @classmethod
    def equally_spaced(cls, order: int, dimension: int) -> "SplineSpec":
        if dimension < order:
            raise ValueError(f"dimension {dimension} is smaller than order {order}")
        count = dimension - order
        knots = np.linspace(0.0, 1.0, count + 2)[1:-1]
        return cls(order=order, interior_knots=[float(k) for k in knots])


class ResponseConvention(str, Enum):
    TRANSFORMED = "transformed"              # regress w*Y on the model
    WEIGHTED_RESIDUAL = "weighted_residual"  # minimize sum w (Y - s)^2


class BroadcastOptions(BaseModel):
    """Block-wise descent options."""
    rank: int = Field(default_factory=lambda: get_settings().cp_rank, ge=1)
    tol: float = Field(default_factory=lambda: get_settings().cp_tol, gt=0.0)
    max_cycles: int = Field(default_factory=lambda: get_settings().cp_max_cycles, ge=1)
    ridge: float = Field(default_factory=lambda: get_settings().cp_ridge, gt=0.0)
    restarts: int = Field(default_factory=lambda: get_settings().cp_restarts, ge=1)
    seed: int = 0
    response: ResponseConvention = ResponseConvention.TRANSFORMED

    model_config = ConfigDict(frozen=True)


class CPModel(BaseModel):
    """
    s(T) = c + (1/pq) sum_r sum_{a,b} beta1_r[a] beta2_r[b] <alpha_r, b~(T_ab)>.

    T entries are mapped into [0, 1] with the stored per-entry affine map.
    Factor rows are unit norm with a positive first nonzero entry.
    """
    constant: float
    factors_rows: FloatArray
    factors_cols: FloatArray
    spline_coeffs: FloatArray
    spline: SplineSpec
    input_lower: FloatArray
    input_upper: FloatArray
    fitted_values: Optional[FloatArray] = None
    objective_trace: List[float] = Field(default_factory=list)
    ridge_used: bool = False
    cycles: int = 0

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def rank(self) -> int:
        return self.factors_rows.shape[0]

    @property
    def p(self) -> int:
        return self.factors_rows.shape[1]

    @property
    def q(self) -> int:
        return self.factors_cols.shape[1]

    def to_document(self) -> dict:
        """Serializable document (floats round-trip exactly through json)."""
        return {
            "c": float(self.constant),
            "R": self.rank,
            "p": self.p,
            "q": self.q,
            "spline": {"order": self.spline.order, "knots": list(self.spline.interior_knots)},
            "factors_rows": self.factors_rows.tolist(),
            "factors_cols": self.factors_cols.tolist(),
            "spline_coeffs": self.spline_coeffs.tolist(),
            "input_scaling": {
                "lower": self.input_lower.tolist(),
                "upper": self.input_upper.tolist(),
            },
        }

    @classmethod
    def from_document(cls, document: dict) -> "CPModel":
        spline = document["spline"]
        return cls(
            constant=document["c"],
            factors_rows=document["factors_rows"],
            factors_cols=document["factors_cols"],
            spline_coeffs=document["spline_coeffs"],
            spline=SplineSpec(order=spline["order"], interior_knots=spline["knots"]),
            input_lower=document["input_scaling"]["lower"],
            input_upper=document["input_scaling"]["upper"],
        )
