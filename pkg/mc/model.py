from typing import Optional

from pydantic import BaseModel, Field


class CostEstimate(BaseModel):
    name: str
    variant: str
    mean: float
    stderr: float
    n: int
    costs: list[float] = Field(default_factory=list, exclude=True)


class PairwiseRow(BaseModel):
    a: str
    b: str
    difference: float
    stderr: float
    ci_low: float
    ci_high: float
    overlap: bool


class ComparisonReport(BaseModel):
    T: float
    dt: float
    n: int
    seed: int
    ranking: list[str]
    estimates: list[CostEstimate]
    pairwise: list[PairwiseRow]
    separated: Optional[str] = None
    separated_wins: Optional[bool] = None


class ProbeRow(BaseModel):
    t: float
    theta: list[float]
    radius: float
    count: int
    cost_to_go: float
    stderr: float
    value: float
    passed: Optional[bool] = None


class ConsistencyReport(BaseModel):
    v0: float
    mc_mean: float
    mc_stderr: float
    eps_disc: float
    difference: float
    tolerance: float
    passed: bool
    probes: list[ProbeRow]
    probes_evaluated: int = 0
    # false when no probe neighbourhood held enough samples
    probes_passed: bool
