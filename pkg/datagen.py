import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError
from tqdm import tqdm

from bspline import resample_path
from env import build_sdf_grid
from errors import ConfigError, DatasetFormatError, GenerationError, PreconditionError
from models.config_model import DatagenConfig, RobotConfig
from models.plan_model import SCHEMA_VERSION, DatasetHeader, EePoseModel, PathRecord, PlanningContext
from models.scene_model import Scene
from robot import POINT_MASS, RobotModel, config_valid, fk_ee_pose, make_robot

logger = logging.getLogger(__name__)

MAX_CONTEXT_TRIES = 10_000
GP_HARMONICS = 5
GP_TRIES = 50


@dataclass
class Dataset:
    header: DatasetHeader
    records: List[PathRecord]

    def context_hashes(self) -> set:
        return {r.context.context_hash() for r in self.records}


def default_step_size(model: RobotModel) -> float:
    return 0.05 if model.kind == POINT_MASS else 0.1


def segment_valid(model: RobotModel, sdf, a, b, spacing: float) -> bool:
    """Check a straight configuration-space segment at sample spacing <= `spacing`."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    n = max(2, int(np.ceil(np.linalg.norm(b - a) / spacing)) + 1)
    samples = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
    return bool(np.all(config_valid(model, sdf, samples)))


def path_valid(model: RobotModel, sdf, path, spacing: float) -> bool:
    return all(segment_valid(model, sdf, a, b, spacing) for a, b in zip(path[:-1], path[1:]))


def path_length(path) -> float:
    return float(np.sum(np.linalg.norm(np.diff(np.asarray(path, dtype=float), axis=0), axis=1)))


def sample_context(model: RobotModel, sdf, rng: np.random.Generator, task: str = "",
                   goal_mode: str = "config", min_separation: float = 0.5) -> PlanningContext:
    """Rejection-sample collision-free start and goal configurations at least `min_separation` apart."""
    lo, hi = model.limits.q_min, model.limits.q_max
    for _ in range(MAX_CONTEXT_TRIES):
        pair = rng.uniform(lo, hi, size=(2, model.dof))
        if not np.all(config_valid(model, sdf, pair)):
            continue
        if np.linalg.norm(pair[1] - pair[0]) < min_separation:
            continue
        ee_goal = None
        if goal_mode == "ee":
            pose = fk_ee_pose(model, pair[1])
            ee_goal = EePoseModel(position=tuple(pose.position.tolist()), angle=pose.angle)
        return PlanningContext(task=task, q_start=pair[0].tolist(), q_goal=pair[1].tolist(), ee_goal=ee_goal)
    raise GenerationError(f"no valid start/goal pair found in {MAX_CONTEXT_TRIES} tries")


class _Tree:
    def __init__(self, root: np.ndarray, capacity: int = 256):
        self.nodes = np.empty((capacity, len(root)))
        self.parents = np.empty(capacity, dtype=int)
        self.size = 0
        self.add(root, -1)

    def add(self, q: np.ndarray, parent: int) -> int:
        if self.size == len(self.nodes):
            self.nodes = np.concatenate([self.nodes, np.empty_like(self.nodes)])
            self.parents = np.concatenate([self.parents, np.empty_like(self.parents)])
        self.nodes[self.size] = q
        self.parents[self.size] = parent
        self.size += 1
        return self.size - 1

    def nearest(self, q: np.ndarray) -> int:
        return int(np.argmin(np.linalg.norm(self.nodes[:self.size] - q, axis=1)))

    def branch(self, idx: int) -> List[np.ndarray]:
        """Nodes from the root to `idx`."""
        out = []
        while idx >= 0:
            out.append(self.nodes[idx].copy())
            idx = self.parents[idx]
        return out[::-1]


def rrt_connect(sdf, model: RobotModel, q_start, q_goal, step_size: float, max_iters: int,
                rng: np.random.Generator) -> Optional[np.ndarray]:
    """Bidirectional RRT; returns a (L, d) polyline or None when no connection is found."""
    q_start, q_goal = np.asarray(q_start, dtype=float), np.asarray(q_goal, dtype=float)
    if not config_valid(model, sdf, q_start):
        raise PreconditionError(f"start configuration {q_start.tolist()} is in collision or out of limits")
    if not config_valid(model, sdf, q_goal):
        raise PreconditionError(f"goal configuration {q_goal.tolist()} is in collision or out of limits")
    spacing = step_size / 4.0
    if segment_valid(model, sdf, q_start, q_goal, spacing):
        return np.stack([q_start, q_goal])

    def extend(tree: _Tree, target: np.ndarray) -> Optional[int]:
        near = tree.nearest(target)
        q_near = tree.nodes[near]
        gap = np.linalg.norm(target - q_near)
        q_new = target if gap <= step_size else q_near + step_size * (target - q_near) / gap
        if not segment_valid(model, sdf, q_near, q_new, spacing):
            return None
        return tree.add(q_new, near)

    def connect(tree: _Tree, target: np.ndarray) -> Optional[int]:
        while True:
            idx = extend(tree, target)
            if idx is None:
                return None
            if np.array_equal(tree.nodes[idx], target):
                return idx

    start_tree, goal_tree = _Tree(q_start), _Tree(q_goal)
    grow, other = start_tree, goal_tree
    lo, hi = model.limits.q_min, model.limits.q_max
    for it in range(max_iters):
        new = extend(grow, rng.uniform(lo, hi))
        if new is not None:
            met = connect(other, grow.nodes[new])
            if met is not None:
                if grow is start_tree:
                    path = grow.branch(new) + other.branch(met)[::-1][1:]
                else:
                    path = other.branch(met) + grow.branch(new)[::-1][1:]
                logger.debug("rrt-connect joined after %d iterations", it + 1)
                return np.stack(path)
        grow, other = other, grow
    return None


def shortcut(path, sdf, model: RobotModel, rounds: int, rng: np.random.Generator, spacing: float) -> np.ndarray:
    """Random-pair shortcutting; never lengthens the path."""
    path = [np.asarray(q, dtype=float) for q in path]
    for _ in range(rounds):
        if len(path) < 3:
            break
        i, j = sorted(rng.choice(len(path), size=2, replace=False))
        if j - i < 2:
            continue
        if segment_valid(model, sdf, path[i], path[j], spacing):
            path = path[:i + 1] + path[j:]
    return np.stack(path)


def _solve(sdf, model: RobotModel, a, b, cfg: DatagenConfig, rng, step: float) -> Optional[np.ndarray]:
    raw = rrt_connect(sdf, model, a, b, step, cfg.max_iters, rng)
    if raw is None:
        return None
    short = shortcut(raw, sdf, model, cfg.shortcut_rounds, rng, step / 4.0)
    return resample_path(short, cfg.path_points)


def _context_records(args) -> List[PathRecord]:
    k, sdf, model, cfg, task = args
    rng = np.random.default_rng([cfg.seed, k])
    ctx = sample_context(model, sdf, rng, task, cfg.goal_mode, cfg.min_separation)
    step = cfg.step_size or default_step_size(model)
    forward = _solve(sdf, model, ctx.q_start, ctx.q_goal, cfg, rng, step)
    if forward is None:
        logger.warning("context %d: no path found within %d iterations", k, cfg.max_iters)
        return []
    records = [PathRecord(context=ctx, path=forward.tolist())]
    if cfg.reverse_connect:
        backward = _solve(sdf, model, ctx.q_goal, ctx.q_start, cfg, rng, step)
        if backward is not None:
            records.append(PathRecord(context=ctx, path=backward[::-1].tolist()))
    return records


def _gp_context_records(args) -> List[PathRecord]:
    k, sdf, model, cfg, task = args
    rng = np.random.default_rng([cfg.seed, k])
    ctx = sample_context(model, sdf, rng, task, cfg.goal_mode, cfg.min_separation)
    start, goal = np.asarray(ctx.q_start), np.asarray(ctx.q_goal)
    spacing = (cfg.step_size or default_step_size(model)) / 4.0
    for _ in range(GP_TRIES):
        path = gp_bridge(start, goal, cfg.path_points, cfg.gp_amplitude, rng)
        if path_valid(model, sdf, path, spacing):
            return [PathRecord(context=ctx, path=path.tolist())]
    logger.warning("context %d: no valid smooth demonstration in %d draws", k, GP_TRIES)
    return []


def gp_bridge(start, goal, n_points: int, amplitude: float, rng: np.random.Generator) -> np.ndarray:
    """Straight line plus a random sine series that vanishes at both ends."""
    s = np.linspace(0.0, 1.0, n_points)
    k = np.arange(1, GP_HARMONICS + 1)
    coeffs = rng.normal(0.0, amplitude / k[:, None], size=(GP_HARMONICS, len(start)))
    bumps = np.sin(np.pi * np.outer(s, k)) @ coeffs
    return start + s[:, None] * (goal - start) + bumps


def _generate(worker, scene: Scene, robot: RobotConfig, cfg: DatagenConfig, task: str,
              generator: str, sdf_resolution: int, workers: int, progress: bool) -> Dataset:
    if cfg.goal_mode == "ee" and robot.kind == POINT_MASS:
        raise ConfigError("end-effector goals need a planar chain robot")
    model = make_robot(robot)
    sdf = build_sdf_grid(scene, sdf_resolution, include_extra=False)
    jobs = [(k, sdf, model, cfg, task) for k in range(cfg.n_contexts)]

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(worker, jobs), total=len(jobs), desc="contexts", disable=not progress))
    else:
        results = [worker(job) for job in tqdm(jobs, desc="contexts", disable=not progress)]

    records = [r for group in results for r in group]
    succeeded = sum(1 for group in results if group)
    rate = succeeded / cfg.n_contexts
    logger.info("%d of %d contexts solved, %d records", succeeded, cfg.n_contexts, len(records))
    if rate < cfg.min_success:
        raise GenerationError(f"only {succeeded} of {cfg.n_contexts} contexts solved "
                              f"({rate:.0%} < {cfg.min_success:.0%})")
    header = DatasetHeader(
        task=task, robot=robot, scene_hash=scene.scene_hash(), generator=generator, seed=cfg.seed,
        goal_mode=cfg.goal_mode, n_contexts=cfg.n_contexts, n_succeeded=succeeded, n_records=len(records),
    )
    return Dataset(header=header, records=records)


def generate_dataset(scene: Scene, robot: RobotConfig, cfg: DatagenConfig, task: str = "",
                     sdf_resolution: int = 256, workers: int = 1, progress: bool = False) -> Dataset:
    return _generate(_context_records, scene, robot, cfg, task, "rrt-connect", sdf_resolution, workers, progress)


def generate_gp_demonstrations(scene: Scene, robot: RobotConfig, cfg: DatagenConfig, task: str = "",
                               sdf_resolution: int = 256, workers: int = 1, progress: bool = False) -> Dataset:
    return _generate(_gp_context_records, scene, robot, cfg, task, "gp", sdf_resolution, workers, progress)


def write_dataset(path, dataset: Dataset):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        f.write(dataset.header.model_dump_json() + "\n")
        for record in dataset.records:
            f.write(record.model_dump_json() + "\n")
    logger.info("wrote %d records to %s", len(dataset.records), path)


def read_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"dataset file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise DatasetFormatError(f"{path} is empty")

    try:
        raw = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path} line 1: malformed header ({e})") from e
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise DatasetFormatError(f"{path}: schema version {raw.get('schema_version')} is not supported, "
                                 f"expected {SCHEMA_VERSION}")
    try:
        header = DatasetHeader.model_validate(raw)
    except ValidationError as e:
        raise DatasetFormatError(f"{path} line 1: invalid header ({e})") from e

    records = []
    for n, line in enumerate(lines[1:], start=2):
        try:
            records.append(PathRecord.model_validate_json(line))
        except ValidationError as e:
            raise DatasetFormatError(f"{path} line {n}: malformed record; last good line is {n - 1}") from e
    if len(records) != header.n_records:
        raise DatasetFormatError(f"{path}: header declares {header.n_records} records but the file holds "
                                 f"{len(records)}; last good line is {len(lines)}")
    return Dataset(header=header, records=records)
