import math
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field


class SchedulerOptions(BaseModel):
    mcts_iters: int = Field(5000, ge=1)
    exploration_c: float = Field(math.sqrt(2), gt=0)
    lcs_threshold: float = Field(0.15, gt=0)
    max_candidates: int = Field(8, ge=1)
    max_stages: Optional[int] = Field(None, ge=1)


class SyntheticRequest(BaseModel):
    cls: Literal["Simple", "Middle", "Complex"] = "Simple"
    n_tasks: int = Field(3, ge=1)
    scale: Literal["desk", "full"] = "desk"
    edge_density: float = Field(0.1, ge=0, le=1)
    deadline_range: tuple[int, int] = (400, 4000)
    priority_range: tuple[int, int] = (1, 4)
    critical_fraction: float = Field(0.25, ge=0, le=1)


class RunConfig(BaseModel):
    """Everything that determines a run; hashed into the report's config_hash."""

    platform: Union[str, dict[str, Any]] = "desk4"
    workload: Optional[dict[str, Any]] = None       # same layout as a workload file
    synthetic: Optional[SyntheticRequest] = None    # used when no workload is given
    options: SchedulerOptions = SchedulerOptions()
    seed: int = 0
    baseline: Literal["lts", "tss-nprm", "none"] = "none"


class ScheduleRequest(RunConfig):
    arrivals: Optional[list[tuple[int, int]]] = None  # (task id, slot); default: each task's own arrival


class SimulateRequest(RunConfig):
    arrivals: Optional[list[tuple[int, int]]] = None
    rate: Optional[float] = Field(None, gt=0)       # Poisson trace when arrivals is omitted
    n_arrivals: int = Field(100, ge=1)


class LbtRequest(RunConfig):
    lo: float = Field(0.001, gt=0)
    hi: float = Field(0.5, gt=0)
    iterations: int = Field(12, ge=12)
    n_arrivals: int = Field(500, ge=500)


class ValidateRequest(RunConfig):
    table: str
    arrivals: Optional[list[tuple[int, int]]] = None


class BenchMcuRequest(BaseModel):
    seed: int = 0
    pairs: int = Field(10, ge=1)
    n_a: int = Field(8, ge=1)
    n_b: int = Field(20, ge=1)
    p_a: float = Field(0.4, ge=0, le=1)
    p_extra: float = Field(0.15, ge=0, le=1)
    mcts_iters: int = Field(50000, ge=1)
    exploration_c: float = Field(math.sqrt(2), gt=0)


class GenWorkloadRequest(BaseModel):
    spec: SyntheticRequest = SyntheticRequest()
    seed: int = 0


class ViolationModel(BaseModel):
    kind: str
    subject: list[Any]
    t: Optional[int] = None
    detail: str = ""


class RunReport(BaseModel):
    command: str
    version: str
    config_hash: str
    seed: int
    platform: dict[str, Any]
    timeslot_cycles: int
    result: dict[str, Any]
    baseline: Optional[dict[str, Any]] = None
    comparison: dict[str, Optional[float]] = {}
    balance: list[dict[str, Any]] = []
    violations: list[ViolationModel] = []


class ScheduleResponse(BaseModel):
    report: RunReport
    table: str


class LbtProbe(BaseModel):
    policy: str
    rate: float
    sla_rate: float
    satisfied: bool
    energy_pj: float


class LbtResponse(BaseModel):
    config_hash: str
    seed: int
    timeslot_cycles: int
    lbt: dict[str, Optional[float]]          # policy -> tasks/slot (None if infeasible)
    qps: dict[str, Optional[float]]
    hit_upper: dict[str, bool]
    probes: list[LbtProbe]


class BenchRow(BaseModel):
    pair: int
    exists: bool
    mcts_iterations: Optional[int]           # None when the search did not succeed
    backtrack_expansions: int


class BenchMcuResponse(BaseModel):
    config_hash: str
    rows: list[BenchRow]
    median_mcts: Optional[float]            # None when most searches failed
    median_backtrack: float


class GenWorkloadResponse(BaseModel):
    config_hash: str
    workload: dict[str, Any]
    stats: list[dict[str, int]]


class ValidateResponse(BaseModel):
    config_hash: str
    feasible: bool
    violations: list[ViolationModel]
    finish: dict[int, Optional[int]]


class ErrorResponse(BaseModel):
    module: str
    error: str
