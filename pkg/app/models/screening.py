"""
Screening Models

Ball-correlation ranking and break-point subset selection output.
"""

from typing import List, Optional

from pydantic import BaseModel, Field


class CovariateRanking(BaseModel):
    """Covariates ordered by descending ball correlation with the treatment."""
    ranking: List[int] = Field(..., description="0-based covariate indices, strongest first")
    bcor_values: List[float] = Field(..., description="Bcor per covariate, indexed by original position")
    degenerate: List[int] = Field(default_factory=list, description="constant covariates (Bcor recorded as 0)")

    @property
    def ranked_bcor(self) -> List[float]:
        return [self.bcor_values[j] for j in self.ranking]


class ScreeningResult(BaseModel):
    """Screening output: ranking, WEIM path and the selected prefix."""
    ranking: List[int]
    bcor_values: List[float]
    weim_path: List[float] = Field(default_factory=list)
    selected_count: int
    selected_indices: List[int]
    break_step: Optional[int] = Field(None, description="1-based step at which the break was declared")
    step_errors: dict[int, str] = Field(default_factory=dict)
    break_factor: float
