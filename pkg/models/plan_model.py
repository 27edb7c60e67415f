import hashlib
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, model_validator

from models.config_model import RobotConfig

SCHEMA_VERSION = 1


class EePoseModel(BaseModel):
    position: Tuple[float, float]
    angle: float


class PlanningContext(BaseModel):
    """Conditioning variable: start configuration plus a goal configuration or EE pose.

    EE-goal contexts may still carry `q_goal` (the configuration the goal pose
    was generated from); planners that need a goal configuration use it.
    """

    task: str = ""
    q_start: List[float]
    q_goal: Optional[List[float]] = None
    ee_goal: Optional[EePoseModel] = None

    @model_validator(mode="after")
    def check_goal(self):
        if self.q_goal is None and self.ee_goal is None:
            raise ValueError("a context needs q_goal or ee_goal")
        if self.q_goal is not None and len(self.q_goal) != len(self.q_start):
            raise ValueError("q_goal and q_start differ in dimension")
        return self

    @property
    def goal_mode(self) -> Literal["config", "ee"]:
        return "ee" if self.ee_goal is not None else "config"

    def context_hash(self) -> str:
        payload = self.model_dump_json(include={"q_start", "q_goal", "ee_goal"})
        return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


class PathRecord(BaseModel):
    context: PlanningContext
    path: List[List[float]]


class DatasetHeader(BaseModel):
    schema_version: int = SCHEMA_VERSION
    task: str
    robot: RobotConfig
    scene_hash: str
    generator: Literal["rrt-connect", "gp"] = "rrt-connect"
    seed: int
    goal_mode: Literal["config", "ee"] = "config"
    n_contexts: int
    n_succeeded: int
    n_records: int


class TrajectoryDoc(BaseModel):
    valid: bool
    control_points: List[List[float]]
    q: List[List[float]]
    costs: Dict[str, float]
    grad_evals: int


class PlanResultDoc(BaseModel):
    planner: str
    task: str
    context: PlanningContext
    robot: RobotConfig
    duration: float
    selected: int
    selected_valid: bool
    trajectories: List[TrajectoryDoc]
    timing: Optional[Dict[str, float]] = None
