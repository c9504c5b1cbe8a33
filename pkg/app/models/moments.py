"""
Moment System Model

The centered, variance-scaled balancing-constraint matrix shared by the
balancer, the screening loop and the study runner.
"""

from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .arrays import FloatArray


class MomentSystem(BaseModel):
    """
    Balancing constraints M~ (n x K_effective).

    Column k of the raw system is u_l(T) * v_l~(X) with k = l~ * K1 + l
    (0-based); it is centered at mean(u_l) * mean(v_l~) and scaled by
    lambda_k = 1 / sd_k. Zero-variance columns are dropped.
    """
    matrix: FloatArray
    lam: FloatArray = Field(..., description="lambda_k = 1/sigma_k for retained columns")
    means: FloatArray = Field(..., description="centering m_bar_k for every raw column")
    sigmas: FloatArray = Field(..., description="sample sd (ddof=1) of every raw column")
    kept_columns: List[int]
    column_pairs: List[Tuple[int, int]] = Field(
        default_factory=list,
        description="(l, l~) basis pair of every retained column"
    )
    column_names: List[str] = Field(default_factory=list)
    n_raw_columns: int
    k1: int = 1
    k2: int = 1

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def k_effective(self) -> int:
        return self.matrix.shape[1]

    @property
    def dropped_columns(self) -> List[int]:
        kept = set(self.kept_columns)
        return [k for k in range(self.n_raw_columns) if k not in kept]

    @property
    def marginal_mask(self) -> np.ndarray:
        """True for retained columns with an intercept factor (sample mean 0)."""
        if not self.column_pairs:
            return np.zeros(self.k_effective, dtype=bool)
        return np.array([l == 0 or lt == 0 for l, lt in self.column_pairs])

    @classmethod
    def from_matrix(cls, matrix, names: Optional[List[str]] = None) -> "MomentSystem":
        """Wrap an already centered and scaled constraint matrix."""
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim == 1:
            matrix = matrix[:, None]
        k = matrix.shape[1]
        return cls(
            matrix=matrix,
            lam=np.ones(k),
            means=np.zeros(k),
            sigmas=np.ones(k),
            kept_columns=list(range(k)),
            column_names=names or [f"m_{j + 1}" for j in range(k)],
            n_raw_columns=k,
            k1=k,
            k2=1,
        )
