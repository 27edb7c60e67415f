import csv
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from bspline import DenseTrajectory
from errors import PreconditionError
from models.report_model import CSV_COLUMNS, ContextRow, EvalReport, PlannerSummary
from robot import EePose2, RobotModel, fk_ee_pose, wrap_angle

logger = logging.getLogger(__name__)


def success_and_fraction(flags: Sequence[bool]) -> Tuple[int, float]:
    flags = np.asarray(flags, dtype=bool)
    if flags.size == 0:
        raise PreconditionError("need at least one validity flag")
    fraction = float(flags.mean())
    return int(fraction > 0), fraction


def vendi_score(trajectories: Sequence[np.ndarray]) -> float:
    """Exponentiated entropy of the similarity spectrum under k(a, b) = exp(-|a - b|^2)."""
    if len(trajectories) == 0:
        raise PreconditionError("the Vendi score needs at least one trajectory")
    X = np.stack([np.asarray(t, dtype=float).reshape(-1) for t in trajectories])
    # resolution-independent distances
    X = X / np.sqrt(X.shape[1])
    sq = np.sum((X[:, None, :] - X[None, :, :]) ** 2, axis=-1)
    K = np.exp(-sq) / len(X)
    eigvals = np.clip(eigh((K + K.T) / 2.0, eigvals_only=True), 0.0, None)
    eigvals = eigvals / eigvals.sum()
    nz = eigvals[eigvals > 0]
    return float(np.exp(-np.sum(nz * np.log(nz))))


def path_and_smoothness(dense: DenseTrajectory) -> Tuple[float, float]:
    """Arc length of the dense path, and summed acceleration norms times the sample spacing."""
    length = float(np.sum(np.linalg.norm(np.diff(dense.q, axis=0), axis=1)))
    dt = dense.T / (dense.n_s - 1)
    smoothness = float(np.sum(np.linalg.norm(dense.ddq, axis=1)) * dt)
    return length, smoothness


def pose_errors(dense: DenseTrajectory, goal: EePose2, model: RobotModel) -> Tuple[float, float]:
    pose = fk_ee_pose(model, dense.q[-1])
    position = float(np.linalg.norm(pose.position - goal.position))
    orientation = float(abs(wrap_angle(pose.angle - goal.angle)))
    return position, orientation


def _mean(values: Iterable[float]) -> Optional[float]:
    values = list(values)
    return float(np.mean(values)) if values else None


def evaluate_result(result, model: RobotModel, scenario: str, context_index: int,
                    goal: Optional[EePose2] = None) -> ContextRow:
    """One row per (scenario, planner, context); quality metrics use valid trajectories only."""
    success, fraction = success_and_fraction(result.valid)
    valid = [d for d, ok in zip(result.dense, result.valid) if ok]
    lengths, smooth = zip(*[path_and_smoothness(d) for d in valid]) if valid else ((), ())
    row = ContextRow(
        scenario=scenario, planner=result.planner, context_index=context_index,
        context_hash=result.context.context_hash(), success=success, fraction_valid=fraction,
        vendi=vendi_score([d.q for d in valid]) if valid else None,
        path_length=_mean(lengths), smoothness=_mean(smooth),
    )
    if goal is not None and valid:
        errors = [pose_errors(d, goal, model) for d in valid]
        row.ee_position_error = _mean(e[0] for e in errors)
        row.ee_orientation_error = _mean(e[1] for e in errors)
    return row


def aggregate(rows: List[ContextRow], task: str) -> EvalReport:
    groups = {}
    for row in rows:
        groups.setdefault((row.scenario, row.planner), []).append(row)
    summaries = []
    for (scenario, planner), group in groups.items():
        summaries.append(PlannerSummary(
            scenario=scenario,
            planner=planner,
            n_contexts=len(group),
            success_rate=float(np.mean([r.success for r in group])),
            fraction_valid=float(np.mean([r.fraction_valid for r in group])),
            **{
                name: _mean(getattr(r, name) for r in group if getattr(r, name) is not None)
                for name in ("vendi", "path_length", "smoothness", "ee_position_error", "ee_orientation_error")
            },
        ))
    return EvalReport(task=task, summaries=summaries, rows=rows)


def write_rows_csv(path, rows: List[ContextRow]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else v for k, v in row.model_dump().items()})
    logger.info("wrote %d rows to %s", len(rows), path)
