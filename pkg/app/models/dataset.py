"""
Dataset Models

Observations of (matrix treatment, covariates, outcome), the basis choices
used to build balancing moments, and the data diagnostics report.
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..core.exceptions import InputError
from .arrays import FloatArray


class Dataset(BaseModel):
    """
    n observations of (T_i, X_i, Y_i).

    treatments is n x p x q, covariates n x L, outcomes n. Shapes are checked
    on construction; finiteness is checked by the consumers (see check_finite)
    so that diagnostics can still be produced for dirty data.
    """
    treatments: FloatArray
    covariates: FloatArray
    outcomes: FloatArray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="after")
    def _check_shapes(self) -> "Dataset":
        if self.treatments.ndim != 3:
            raise InputError(f"treatments must be n x p x q, got shape {self.treatments.shape}")
        if self.covariates.ndim != 2:
            raise InputError(f"covariates must be n x L, got shape {self.covariates.shape}")
        if self.outcomes.ndim != 1:
            raise InputError(f"outcomes must be a vector, got shape {self.outcomes.shape}")
        n = self.treatments.shape[0]
        if self.covariates.shape[0] != n or self.outcomes.shape[0] != n:
            raise InputError(
                f"row counts disagree: treatments {n}, covariates {self.covariates.shape[0]}, "
                f"outcomes {self.outcomes.shape[0]}"
            )
        if n < 2:
            raise InputError(f"need at least 2 observations, got {n}")
        if min(self.treatments.shape[1:]) < 1 or self.covariates.shape[1] < 1:
            raise InputError("treatment and covariate dimensions must be positive")
        return self

    @property
    def n(self) -> int:
        return self.treatments.shape[0]

    @property
    def p(self) -> int:
        return self.treatments.shape[1]

    @property
    def q(self) -> int:
        return self.treatments.shape[2]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(n, p, q, L)."""
        return self.n, self.p, self.q, self.n_covariates

    def treatment_names(self) -> List[str]:
        """Row-major names t_1_1 ... t_p_q."""
        return [f"t_{a + 1}_{b + 1}" for a in range(self.p) for b in range(self.q)]

    def covariate_names(self) -> List[str]:
        return [f"x_{j + 1}" for j in range(self.n_covariates)]

    def take(self, rows) -> "Dataset":
        """Dataset restricted to (possibly repeated) row indices."""
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            treatments=self.treatments[rows],
            covariates=self.covariates[rows],
            outcomes=self.outcomes[rows],
        )

    def with_covariates(self, columns: List[int]) -> "Dataset":
        return Dataset(
            treatments=self.treatments,
            covariates=self.covariates[:, list(columns)],
            outcomes=self.outcomes,
        )

    def check_finite(self) -> None:
        """Raise InputError naming the first non-finite entry."""
        for name, values in (
            ("outcomes", self.outcomes.reshape(self.n, -1)),
            ("treatments", self.treatments.reshape(self.n, -1)),
            ("covariates", self.covariates),
        ):
            bad = np.argwhere(~np.isfinite(values))
            if bad.size:
                row, column = bad[0]
                raise InputError(f"non-finite {name} value at observation {row}, column {column}")


class TreatmentBasis(str, Enum):
    """Treatment basis u_K1(T)."""
    INTERCEPT_PLUS_VEC = "intercept_plus_vec"


class CovariateBasis(str, Enum):
    """Covariate basis v_K2(X); an intercept is always the first column."""
    LINEAR = "linear"
    LINEAR_PLUS_SQUARES = "linear_plus_squares"
    LINEAR_PLUS_INTERACTIONS = "linear_plus_interactions"
    CUSTOM_COLUMNS = "custom_columns"


class BasisSpec(BaseModel):
    """Basis functions whose products form the balancing moments."""
    treatment_basis: TreatmentBasis = TreatmentBasis.INTERCEPT_PLUS_VEC
    covariate_basis: CovariateBasis = CovariateBasis.LINEAR
    custom_columns: Optional[List[List[int]]] = Field(
        None,
        description="Monomials for CUSTOM_COLUMNS: each entry lists 0-based covariate indices multiplied together"
    )
    covariate_subset: Optional[List[int]] = Field(
        None,
        description="Restrict the covariate basis to these 0-based covariates (in this order)"
    )

    model_config = ConfigDict(frozen=True, use_enum_values=False)

    @model_validator(mode="after")
    def _check_custom(self) -> "BasisSpec":
        if self.covariate_basis == CovariateBasis.CUSTOM_COLUMNS:
            if not self.custom_columns or any(len(term) == 0 for term in self.custom_columns):
                raise ValueError("custom_columns must list at least one non-empty monomial")
        return self


class IssueKind(str, Enum):
    NON_FINITE = "non_finite"
    CONSTANT_COLUMN = "constant_column"


class DatasetIssue(BaseModel):
    """One problem found by validate_dataset."""
    kind: IssueKind
    column: str
    rows: List[int] = Field(default_factory=list)
    detail: str = ""


class OutcomeSummary(BaseModel):
    mean: Optional[float] = None
    std: Optional[float] = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    finite_count: int = 0


class DiagnosticsReport(BaseModel):
    """Read-only report on a dataset."""
    n: int
    p: int
    q: int
    n_covariates: int
    issues: List[DatasetIssue] = Field(default_factory=list)
    constant_columns: List[str] = Field(
        default_factory=list,
        description="Columns degenerate for variance scaling"
    )
    outcome_summary: OutcomeSummary = Field(default_factory=OutcomeSummary)

    @property
    def ok(self) -> bool:
        return not self.issues
