from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class RobotConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["point_mass_2d", "planar_chain"] = "point_mass_2d"
    link_lengths: List[float] = []
    q_min: List[float] = [-1.0, -1.0]
    q_max: List[float] = [1.0, 1.0]
    v_max: List[float] = [1.0, 1.0]
    a_max: List[float] = [2.0, 2.0]
    sphere_fractions: List[float] = [0.25, 0.5, 0.75]
    sphere_radius_scale: float = Field(0.08, gt=0)
    point_radius: float = Field(0.05, gt=0)

    @property
    def dof(self) -> int:
        return 2 if self.kind == "point_mass_2d" else len(self.link_lengths)

    @model_validator(mode="after")
    def check_dimensions(self):
        if self.kind == "planar_chain" and not self.link_lengths:
            raise ValueError("planar_chain robots need link_lengths")
        if any(length <= 0 for length in self.link_lengths):
            raise ValueError("link lengths must be positive")
        for name in ("q_min", "q_max", "v_max", "a_max"):
            if len(getattr(self, name)) != self.dof:
                raise ValueError(f"{name} has {len(getattr(self, name))} entries, robot has {self.dof} dof")
        if any(lo >= hi for lo, hi in zip(self.q_min, self.q_max)):
            raise ValueError("q_min must be below q_max for every joint")
        return self


class BsplineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    degree: int = Field(5, ge=1)
    n_b: int = Field(22, ge=3)
    n_s: int = Field(128, ge=2)
    parametrization: Literal["bspline", "waypoints"] = "bspline"
    duration: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def check_pinning(self):
        if self.parametrization == "bspline" and self.n_b < max(2 * self.degree + 2, 7):
            raise ValueError(f"n_b={self.n_b} too small to pin both ends of a degree-{self.degree} spline")
        return self


class ScheduleConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_steps: int = Field(100, ge=2)
    kind: Literal["cosine", "linear"] = "cosine"


class NetworkConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(256, ge=1)
    n_blocks: int = Field(4, ge=1)
    time_dim: int = Field(32, ge=2)
    context_hidden: int = Field(128, ge=1)
    context_out: int = Field(32, ge=1)


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(128, ge=1)
    steps: int = Field(50_000, ge=0)
    lr: float = Field(3e-4, gt=0)
    seed: int = 0
    log_every: int = Field(100, ge=1)
    checkpoint_every: int = Field(5_000, ge=1)


class GuidanceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sampler: Literal["ddim", "ddpm"] = "ddim"
    ddim_steps: int = Field(15, ge=1)
    lambda_prior: float = Field(0.25, gt=0)
    n_inner: int = Field(4, ge=0)
    delta: float = Field(0.15, gt=0)
    step_size: float = Field(1.0, ge=0)
    i_cost: int = Field(
        3, ge=0,
        description="guided iterations at the end of sampling: the last i_cost DDIM positions, or DDPM steps i <= i_cost",
    )
    alpha_noise: Optional[float] = Field(None, ge=0, le=1)
    keep_noise_factor: bool = False
    gp_jitter: float = Field(0.05, ge=0)

    @model_validator(mode="after")
    def check_guided_steps(self):
        if self.sampler == "ddim" and self.i_cost > self.ddim_steps:
            raise ValueError(f"i_cost={self.i_cost} exceeds ddim_steps={self.ddim_steps}")
        return self

    @property
    def noise_scale(self) -> float:
        if self.alpha_noise is not None:
            return self.alpha_noise
        return 0.0 if self.sampler == "ddim" else 1.0

    @property
    def gradient_budget(self) -> int:
        return self.i_cost * self.n_inner


class CostWeights(BaseModel):
    model_config = ConfigDict(extra="forbid")

    collision: float = Field(0.9, ge=0)
    limits: float = Field(0.5, ge=0)
    task: float = Field(0.5, ge=0)
    velocity: float = Field(0.2, ge=0)
    acceleration: float = Field(0.2, ge=0)
    collision_margin: float = Field(0.03, ge=0)
    limit_margin: float = Field(0.0, ge=0)


class DatagenConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_contexts: int = Field(2_000, ge=1)
    seed: int = 0
    generator: Literal["rrt-connect", "gp"] = "rrt-connect"
    step_size: Optional[float] = Field(None, gt=0)
    max_iters: int = Field(50_000, ge=1)
    shortcut_rounds: int = Field(100, ge=0)
    reverse_connect: bool = True
    path_points: int = Field(64, ge=2)
    goal_mode: Literal["config", "ee"] = "config"
    min_separation: float = Field(0.5, ge=0)
    min_success: float = Field(0.9, ge=0, le=1)
    gp_amplitude: float = Field(0.3, ge=0)


class EvaluationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_contexts: int = Field(20, ge=1)
    batch_size: int = Field(50, ge=1)
    planners: List[Literal["dprior", "mpd", "dprior-cost", "gp-cost"]] = ["dprior", "mpd", "dprior-cost", "gp-cost"]
    selection: Literal["length", "ee_error"] = "length"
    seed: int = 1


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    output_dir: Optional[str] = None


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: str = "EnvSimple2D-RobotPointMass2D"
    scene_file: Optional[str] = None
    scene_preset: Optional[str] = "EnvSimple2D"
    sdf_resolution: Optional[int] = Field(None, ge=16)
    robot: RobotConfig = RobotConfig()
    bspline: BsplineConfig = BsplineConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    network: NetworkConfig = NetworkConfig()
    training: TrainingConfig = TrainingConfig()
    guidance: GuidanceConfig = GuidanceConfig()
    costs: CostWeights = CostWeights()
    datagen: DatagenConfig = DatagenConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    paths: PathsConfig = PathsConfig()

    @model_validator(mode="after")
    def check_scene_source(self):
        if self.scene_file is None and self.scene_preset is None:
            raise ValueError("either scene_file or scene_preset is required")
        return self

    @model_validator(mode="after")
    def check_guidance_fits_schedule(self):
        if self.guidance.i_cost > self.schedule.n_steps:
            raise ValueError(f"guidance.i_cost={self.guidance.i_cost} exceeds the {self.schedule.n_steps} diffusion steps")
        return self
