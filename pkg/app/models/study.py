"""
Simulation Study Models

Ground truth of the simulation scenarios, study configuration and the
RMSE report.
"""

from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .arrays import FloatArray
from .dataset import BasisSpec
from .pipeline import Estimator, WeightingMethod
from .spline import BroadcastOptions


class AssignmentModel(str, Enum):
    LINEAR_GAUSSIAN = "linear_gaussian"
    EXTERNAL = "external"   # no closed-form treatment density


class ScenarioTruth(BaseModel):
    """Known data-generating process of one scenario."""
    scenario_id: int
    true_B: FloatArray
    assignment_matrices: FloatArray = Field(..., description="m x p x q maps X_j -> T")
    covariate_dim: int
    covariance: float = 0.2
    outcome_noise_sd: float = 2.0
    treatment_noise_sd: float = 1.0
    nonlinear: bool = False
    confounder_mean: float = Field(0.0, description="population mean of the confounding terms of Y")
    basis: BasisSpec = Field(default_factory=BasisSpec)
    screening: bool = False
    assignment_model: AssignmentModel = AssignmentModel.LINEAR_GAUSSIAN

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def uses_coefficient_metric(self) -> bool:
        return not self.nonlinear

    @property
    def default_estimator(self) -> Estimator:
        return Estimator.BROADCASTED if self.nonlinear else Estimator.LINEAR


class StudyConfig(BaseModel):
    """Replicated Monte-Carlo study."""
    scenarios: List[int]
    sample_sizes: List[int]
    replicates: int = Field(100, ge=1)
    methods: List[WeightingMethod] = Field(
        default_factory=lambda: [WeightingMethod.UNWEIGHTED, WeightingMethod.MDABW,
                                 WeightingMethod.EB, WeightingMethod.WEBM]
    )
    estimator: Optional[Estimator] = Field(None, description="None picks the scenario default")
    master_seed: int = 0
    delta_grid: Optional[List[float]] = None
    broadcast: BroadcastOptions = Field(
        default_factory=lambda: BroadcastOptions(rank=3, restarts=2)
    )


class StudyCell(BaseModel):
    """Replicate-wise RMSE of one (scenario, n, method)."""
    scenario_id: int
    n: int
    method: WeightingMethod
    metric: str
    values: List[Optional[float]] = Field(default_factory=list, description="per replicate, None if failed")
    mean: Optional[float] = None
    sd: Optional[float] = None
    failures: Dict[int, str] = Field(default_factory=dict)
    observed_mean: Optional[float] = Field(
        None, description="fitted-value RMSE against observed Y (nonlinear scenarios)"
    )

    @classmethod
    def aggregate(cls, scenario_id: int, n: int, method: WeightingMethod, metric: str,
                  values: List[Optional[float]], failures: Dict[int, str],
                  observed: Optional[List[Optional[float]]] = None) -> "StudyCell":
        ok = np.array([v for v in values if v is not None], dtype=float)
        observed_ok = np.array([v for v in (observed or []) if v is not None], dtype=float)
        return cls(
            scenario_id=scenario_id,
            n=n,
            method=method,
            metric=metric,
            values=values,
            mean=float(ok.mean()) if ok.size else None,
            sd=float(ok.std(ddof=1)) if ok.size > 1 else None,
            failures=failures,
            observed_mean=float(observed_ok.mean()) if observed_ok.size else None,
        )


class StudyReport(BaseModel):
    """All cells of a study, ordered by (scenario, n, method) as configured."""
    config: StudyConfig
    cells: List[StudyCell]

    def cell(self, scenario_id: int, n: int, method: WeightingMethod) -> StudyCell:
        for cell in self.cells:
            if cell.scenario_id == scenario_id and cell.n == n and cell.method == method:
                return cell
        raise KeyError((scenario_id, n, method))

    def render_table(self) -> str:
        """Plain-text table: methods as rows, (scenario, n) as columns, 'mean (sd)' entries."""
        columns = [(s, n) for s in self.config.scenarios for n in self.config.sample_sizes]
        header = ["Method"] + [f"S{s} n={n}" for s, n in columns]
        rows = [header]
        for method in self.config.methods:
            row = [method.value]
            for s, n in columns:
                cell = self.cell(s, n, method)
                if cell.mean is None:
                    row.append("failed")
                elif cell.sd is None:
                    row.append(f"{cell.mean:.4f}")
                else:
                    row.append(f"{cell.mean:.4f} ({cell.sd:.4f})")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = ["  ".join(value.ljust(width) for value, width in zip(r, widths)).rstrip() for r in rows]
        lines.insert(1, "-" * len(lines[0]))
        return "\n".join(lines) + "\n"


class WeightedObjectiveCheck(BaseModel):
    """Both sides of the weighted-objective identity at a fixed parameter."""
    weighted_objective: float
    direct_estimate: float

    @property
    def relative_gap(self) -> float:
        return abs(self.weighted_objective - self.direct_estimate) / abs(self.direct_estimate)
