import logging
from typing import List, Sequence

from tqdm import tqdm

from metrics import aggregate, evaluate_result
from models.config_model import CostWeights, GuidanceConfig
from models.plan_model import PlanningContext
from models.report_model import ContextRow, EvalReport
from models.scene_model import Scene
from planner import PlanningSession, PlanRequest, plan

logger = logging.getLogger(__name__)

TRAINING_ENV = "training-env"
EXTRA_OBJECTS = "extra-objects"

# start and goal on opposite sides of the square inserted at the origin
SQUARE_START = (-0.8, 0.0)
SQUARE_GOAL = (0.8, 0.0)


def select_test_contexts(contexts: Sequence[PlanningContext], training_hashes, n: int) -> List[PlanningContext]:
    """First `n` distinct contexts not seen in training; overlapping ones are dropped with a warning."""
    training, seen, out = set(training_hashes), set(), []
    for ctx in contexts:
        h = ctx.context_hash()
        if h in training:
            logger.warning("context %s was used for training; excluded from evaluation", h)
            continue
        if h in seen:
            continue
        seen.add(h)
        out.append(ctx)
        if len(out) == n:
            break
    if len(out) < n:
        logger.warning("only %d test contexts available, %d requested", len(out), n)
    return out


def _run(session: PlanningSession, scene: Scene, scenario: str, contexts: Sequence[PlanningContext],
         planners: Sequence[str], batch_size: int, guidance: GuidanceConfig, weights: CostWeights,
         seed: int, sdf_resolution: int, progress: bool, selection: str = "length") -> List[ContextRow]:
    rows = []
    for k, ctx in enumerate(tqdm(contexts, desc=scenario, disable=not progress)):
        goal = session.goal(ctx) if session.goal_mode == "ee" else None
        for name in planners:
            req = PlanRequest(context=ctx, scene=scene, planner=name, batch_size=batch_size,
                              guidance=guidance, weights=weights, seed=seed + k, sdf_resolution=sdf_resolution,
                              selection=selection)
            rows.append(evaluate_result(plan(session, req), session.model, scenario, k, goal))
    return rows


def extra_objects_study(session: PlanningSession, scene: Scene, contexts: Sequence[PlanningContext],
                        planners: Sequence[str], batch_size: int, guidance: GuidanceConfig, weights: CostWeights,
                        seed: int = 0, sdf_resolution: int = 256, task: str = "", progress: bool = False,
                        selection: str = "length") -> EvalReport:
    """Every planner on the training scene, and again with its extra obstacles when it has any."""
    rows = _run(session, scene.training_scene(), TRAINING_ENV, contexts, planners, batch_size,
                guidance, weights, seed, sdf_resolution, progress, selection)
    if scene.extra_obstacles:
        rows += _run(session, scene, EXTRA_OBJECTS, contexts, planners, batch_size,
                     guidance, weights, seed, sdf_resolution, progress, selection)
    return aggregate(rows, task)


def square_obstacle_study(session: PlanningSession, scene: Scene, seeds: Sequence[int], batch_size: int,
                          guidance: GuidanceConfig, weights: CostWeights, sdf_resolution: int = 256,
                          task: str = "", start=SQUARE_START, goal=SQUARE_GOAL,
                          progress: bool = False) -> EvalReport:
    """MPD against prior-then-optimize on a scene whose square was absent from the demonstrations."""
    ctx = PlanningContext(task=task, q_start=list(start), q_goal=list(goal))
    rows = []
    for k, seed in enumerate(tqdm(seeds, desc="seeds", disable=not progress)):
        for name in ("mpd", "dprior-cost"):
            req = PlanRequest(context=ctx, scene=scene, planner=name, batch_size=batch_size,
                              guidance=guidance, weights=weights, seed=seed, sdf_resolution=sdf_resolution)
            rows.append(evaluate_result(plan(session, req), session.model, "square", k))
    report = aggregate(rows, task)
    for s in report.summaries:
        logger.info("%s: mean fraction valid %.3f over %d seeds", s.planner, s.fraction_valid, s.n_contexts)
    return report


def smoothness_study(bspline_session: PlanningSession, waypoint_session: PlanningSession, scene: Scene,
                     contexts: Sequence[PlanningContext], batch_size: int, guidance: GuidanceConfig,
                     weights: CostWeights, seed: int = 0, sdf_resolution: int = 256, task: str = "",
                     planner: str = "mpd", progress: bool = False) -> EvalReport:
    """The same planner with spline and with waypoint trajectory models on matched contexts."""
    rows = _run(bspline_session, scene, "bspline", contexts, [planner], batch_size,
                guidance, weights, seed, sdf_resolution, progress)
    rows += _run(waypoint_session, scene, "waypoints", contexts, [planner], batch_size,
                 guidance, weights, seed, sdf_resolution, progress)
    return aggregate(rows, task)


def summary_for(report: EvalReport, scenario: str, planner: str):
    for s in report.summaries:
        if s.scenario == scenario and s.planner == planner:
            return s
    return None
