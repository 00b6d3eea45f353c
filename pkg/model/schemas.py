from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core.config import KS_MIN_ORDER, KS_RATIO_BAND

Entry = float | tuple[float, float]
MatrixSpec = list[list[Entry]]


class Schema(BaseModel):
    model_config = ConfigDict(extra="forbid")


class Rho0Spec(Schema):
    bloch: Optional[tuple[float, float, float]] = None
    matrix: Optional[MatrixSpec] = None

    @model_validator(mode="after")
    def one_of(self):
        if (self.bloch is None) == (self.matrix is None):
            raise ValueError("give exactly one of 'bloch' or 'matrix'")
        return self


class ModelParams(Schema):
    gamma: float = Field(1.0, gt=0)
    u_max: float = Field(5.0, gt=0)
    epsilon0: float = Field(1e-3, ge=0)
    omega: float = 1.0
    alpha: float = Field(1.0, ge=0)
    dim: int = 2


class ModelSection(Schema):
    name: Literal["decay_homodyne", "decay_counting", "coherent_feedback", "adaptive_measurement"]
    params: ModelParams = ModelParams()
    mode: Optional[Literal["diffusive", "counting"]] = None
    rho0: Optional[Rho0Spec] = None


class CostSection(Schema):
    running_base: MatrixSpec = [[1.0, 0.0], [0.0, 0.0]]
    control_penalty: float = Field(0.01, ge=0)
    terminal: MatrixSpec = [[1.0, 0.0], [0.0, 0.0]]


class RunSection(Schema):
    T: float = Field(1.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    n_traj: int = Field(1000, ge=1)
    seed: int = 0
    scheme: Literal["kraus", "euler"] = "kraus"
    increments: Literal["gaussian", "binary"] = "gaussian"
    n_csv: int = Field(10, ge=0)


class BellmanSection(Schema):
    grid_n: int = Field(41, ge=3)
    time_steps: int = Field(200, ge=1)
    control_grid: Optional[list[float]] = None
    save_every: Optional[int] = Field(None, ge=1)
    estimate_error: bool = True


class VerifySection(Schema):
    dt_grid: list[float] = [2e-3, 1e-3, 5e-4]
    n_seeds: int = Field(20, ge=1)
    ensemble_size: Optional[int] = Field(None, ge=2)
    probe_times: list[float] = [0.25, 0.5, 1.0]
    oracle_dts: list[float] = [1e-2, 2.5e-3]
    innovation_windows: list[tuple[float, float]] = [(0.2, 0.5), (0.5, 1.0)]
    ks_min_order: float = KS_MIN_ORDER
    ks_ratio_band: tuple[float, float] = KS_RATIO_BAND
    oracle_max_ratio: float = 0.6


class RunConfig(Schema):
    model: ModelSection
    cost: CostSection = CostSection()
    run: RunSection = RunSection()
    bellman: BellmanSection = BellmanSection()
    verify: VerifySection = VerifySection()
