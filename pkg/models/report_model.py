from typing import List, Optional

from pydantic import BaseModel

CSV_COLUMNS = [
    "scenario", "planner", "context_index", "context_hash", "success", "fraction_valid",
    "vendi", "path_length", "smoothness", "ee_position_error", "ee_orientation_error",
]


class ContextRow(BaseModel):
    scenario: str
    planner: str
    context_index: int
    context_hash: str
    success: int
    fraction_valid: float
    vendi: Optional[float] = None
    path_length: Optional[float] = None
    smoothness: Optional[float] = None
    ee_position_error: Optional[float] = None
    ee_orientation_error: Optional[float] = None


class PlannerSummary(BaseModel):
    scenario: str
    planner: str
    n_contexts: int
    success_rate: float
    fraction_valid: float
    vendi: Optional[float] = None
    path_length: Optional[float] = None
    smoothness: Optional[float] = None
    ee_position_error: Optional[float] = None
    ee_orientation_error: Optional[float] = None


class EvalReport(BaseModel):
    task: str
    summaries: List[PlannerSummary]
    rows: List[ContextRow]
