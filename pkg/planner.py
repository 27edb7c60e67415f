import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from bspline import BasisMatrices, BsplineSpec, ControlTrajectory, DenseTrajectory, basis_matrices, interpolate
from costs import CostOracle, validity
from diffusion import SAMPLERS, ControlPointCodec, guided_iterations, make_schedule
from env import build_sdf_grid
from errors import NonFiniteError, PreconditionError, ShapeError
from metrics import path_and_smoothness, pose_errors
from models.config_model import CostWeights, GuidanceConfig, RobotConfig
from models.plan_model import PlanningContext, PlanResultDoc, TrajectoryDoc
from models.scene_model import Scene
from nn import Checkpoint, encode_context
from robot import EePose2, make_robot

logger = logging.getLogger(__name__)

PLANNERS = ("dprior", "mpd", "dprior-cost", "gp-cost")


@dataclass
class PlanRequest:
    context: PlanningContext
    scene: Scene
    planner: str = "mpd"
    batch_size: int = 1
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    weights: CostWeights = field(default_factory=CostWeights)
    seed: int = 0
    sdf_resolution: int = 256
    selection: str = "length"

    def __post_init__(self):
        if self.batch_size < 1:
            raise PreconditionError(f"batch size must be at least 1, got {self.batch_size}")
        if self.planner not in PLANNERS:
            raise PreconditionError(f"unknown planner {self.planner!r}; choose from {', '.join(PLANNERS)}")


@dataclass
class PlanResult:
    planner: str
    context: PlanningContext
    trajectories: List[ControlTrajectory]
    dense: List[DenseTrajectory]
    valid: np.ndarray
    costs: List[Dict[str, float]]
    grad_evals: np.ndarray
    selected: int = 0
    selected_valid: bool = False
    timing: Dict[str, float] = field(default_factory=dict)

    @property
    def fraction_valid(self) -> float:
        return float(np.mean(self.valid))


class PlanningSession:
    """Everything a checkpoint fixes: robot, trajectory space, schedule, normalizers and network."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.robot_config = RobotConfig.model_validate(checkpoint.robot)
        self.model = make_robot(self.robot_config)
        self.spec = BsplineSpec(**checkpoint.bspline)
        self.basis = basis_matrices(self.spec)
        self.duration = checkpoint.duration
        self.goal_mode = checkpoint.goal_mode
        self.schedule = make_schedule(checkpoint.schedule["kind"], checkpoint.schedule["n_steps"])
        self.codec = ControlPointCodec(self.spec.n_b, self.model.dof, self.spec.n_pinned,
                                       self.goal_mode, checkpoint.state_normalizer)
        self.denoiser = checkpoint.denoiser()

    def check_request(self, req: PlanRequest):
        if len(req.context.q_start) != self.model.dof:
            raise ShapeError(f"context has {len(req.context.q_start)} joints, checkpoint robot has {self.model.dof}")
        if req.scene.scene_hash() != self.checkpoint.scene_hash:
            raise PreconditionError(f"scene {req.scene.name!r} differs from the scene the checkpoint was trained on")
        guided = guided_iterations(req.guidance, self.schedule.n_steps)
        if guided != req.guidance.i_cost:
            raise PreconditionError(
                f"only {guided} sampler iterations can be guided, i_cost is {req.guidance.i_cost}; "
                "the descent baselines would get a larger gradient budget"
            )

    def goal(self, context: PlanningContext):
        if self.goal_mode == "ee":
            return EePose2(np.asarray(context.ee_goal.position), context.ee_goal.angle)
        return np.asarray(context.q_goal, dtype=float)

    def pinned_goal(self, context: PlanningContext):
        return None if self.goal_mode == "ee" else context.q_goal


def smoothness_curvature(session: PlanningSession, weights: CostWeights) -> float:
    """Largest eigenvalue of the velocity, acceleration and limit quadratics over the normalized state.

    Limit penalties are counted as if active everywhere, which bounds their curvature.
    """
    basis, codec, T = session.basis, session.codec, session.duration
    n_s = basis.n_s
    lam = weights.limits
    H = ((weights.velocity + lam) / T ** 2 * basis.B1.T @ basis.B1
         + (weights.acceleration + lam) / T ** 4 * basis.B2.T @ basis.B2
         + lam * basis.B.T @ basis.B) / n_s
    rows = np.arange(codec.free_rows.start, codec.free_rows.stop)
    P = np.zeros((basis.n_b, len(rows)))
    P[rows, np.arange(len(rows))] = 1.0
    if codec.goal_mode == "ee":
        P[-codec.n_pinned:, -1] = 1.0
    Hf = P.T @ H @ P
    scale = codec.normalizer.scale.reshape(len(rows), codec.d)
    return max(float(np.linalg.eigvalsh(s[:, None] * Hf * s[None, :])[-1]) for s in scale.T)


def _rngs(seed: int, batch_size: int):
    return [np.random.default_rng([seed, b]) for b in range(batch_size)]


class _Run:
    """One request's oracle, SDF and gradient timing."""

    def __init__(self, session: PlanningSession, req: PlanRequest):
        session.check_request(req)
        self.session, self.req = session, req
        self.sdf = build_sdf_grid(req.scene, req.sdf_resolution, include_extra=True)
        self.oracle = CostOracle(session.basis, self.sdf, session.model, session.goal(req.context), req.weights,
                                 session.duration, session.spec.n_pinned, batch_size=req.batch_size)
        self.grad_seconds = 0.0

    def decode(self, x) -> ControlTrajectory:
        ctx = self.req.context
        return self.session.codec.decode(x, ctx.q_start, self.session.pinned_goal(ctx), self.session.duration)

    def grad(self, X: np.ndarray) -> np.ndarray:
        tic = time.perf_counter()
        G = self.oracle.grad_batch(np.stack([self.decode(x).w for x in X]))
        out = np.stack([self.session.codec.pull_back(g) for g in G])
        self.grad_seconds += time.perf_counter() - tic
        return out

    def descent_step(self) -> float:
        """Requested step size, capped at 1/L of the quadratic cost terms in state space."""
        L = smoothness_curvature(self.session, self.req.weights)
        step = self.req.guidance.step_size
        if L > 0 and step * L > 1.0:
            logger.debug("descent step %.3g capped at %.3g", step, 1.0 / L)
            step = 1.0 / L
        return step

    def descend(self, X: np.ndarray, steps: int) -> np.ndarray:
        """Plain gradient descent in normalized state space."""
        step = self.descent_step() if steps else 0.0
        for k in range(steps):
            X = X - step * self.grad(X)
            if not np.all(np.isfinite(X)):
                raise NonFiniteError(f"{self.req.planner}: cost descent diverged at step {k + 1}")
        return X

    def sample(self, guided: bool) -> np.ndarray:
        s, req = self.session, self.req
        c = s.checkpoint.context_normalizer.normalize(encode_context(req.context, s.goal_mode))
        sampler = SAMPLERS[req.guidance.sampler]
        return sampler(s.denoiser, c, s.schedule, req.guidance, _rngs(req.seed, req.batch_size),
                       s.codec.state_dim, grad_fn=self.grad if guided else None)

    def finish(self, X: np.ndarray, started: float) -> PlanResult:
        s = self.session
        trajectories = [self.decode(x) for x in X]
        dense = [interpolate(t, s.basis) for t in trajectories]
        valid = np.array([validity(d, self.sdf, s.model) for d in dense], dtype=bool)
        costs = [self.oracle.breakdown(t.w).values for t in trajectories]
        total = time.perf_counter() - started
        result = PlanResult(
            planner=self.req.planner, context=self.req.context, trajectories=trajectories, dense=dense,
            valid=valid, costs=costs, grad_evals=self.oracle.grad_evals.copy(),
            timing={"total": total, "gradient": self.grad_seconds, "generator": total - self.grad_seconds},
        )
        result.selected = select_trajectory(result, self.req.selection, s.model, self.oracle.goal)
        result.selected_valid = bool(valid[result.selected])
        logger.info("%s: %d of %d trajectories valid", self.req.planner, int(valid.sum()), len(valid))
        return result


def dprior_plan(session: PlanningSession, req: PlanRequest) -> PlanResult:
    started = time.perf_counter()
    run = _Run(session, req)
    return run.finish(run.sample(guided=False), started)


def mpd_plan(session: PlanningSession, req: PlanRequest) -> PlanResult:
    started = time.perf_counter()
    run = _Run(session, req)
    return run.finish(run.sample(guided=True), started)


def dprior_cost_plan(session: PlanningSession, req: PlanRequest) -> PlanResult:
    """Prior samples, then the same number of cost-gradient steps MPD spends, without the delta bound."""
    started = time.perf_counter()
    run = _Run(session, req)
    X = run.sample(guided=False)
    return run.finish(run.descend(X, req.guidance.gradient_budget), started)


def straight_line(q_start, q_goal, basis: BasisMatrices, n_pinned: int, T: float,
                  weights: CostWeights) -> ControlTrajectory:
    """Minimum-effort trajectory from q_start to q_goal with both ends pinned.

    With fixed ends on a line the velocity/acceleration optimum stays on that line,
    so the result is a straight path with zero smoothness gradient.
    """
    q_start, q_goal = np.asarray(q_start, dtype=float), np.asarray(q_goal, dtype=float)
    n_b = basis.n_b
    w = np.zeros((n_b, len(q_start)))
    w[:n_pinned], w[-n_pinned:] = q_start, q_goal
    H = weights.velocity / T ** 2 * basis.B1.T @ basis.B1 + weights.acceleration / T ** 4 * basis.B2.T @ basis.B2
    free = np.arange(n_pinned, n_b - n_pinned)
    fixed = np.r_[np.arange(n_pinned), np.arange(n_b - n_pinned, n_b)]
    if np.linalg.matrix_rank(H[np.ix_(free, free)]) == len(free):
        w[free] = np.linalg.solve(H[np.ix_(free, free)], -H[np.ix_(free, fixed)] @ w[fixed])
    else:
        w[free] = q_start + np.linspace(0.0, 1.0, n_b)[free, None] * (q_goal - q_start)
    return ControlTrajectory(w, T)


def gp_prior_cost_plan(session: PlanningSession, req: PlanRequest) -> PlanResult:
    """Straight-line prior with Gaussian jitter on the free rows, then cost descent."""
    if req.context.q_goal is None:
        raise PreconditionError("gp-cost needs a goal configuration; supply q_goal in the context")
    started = time.perf_counter()
    run = _Run(session, req)
    line = straight_line(req.context.q_start, req.context.q_goal, session.basis, session.spec.n_pinned,
                         session.duration, req.weights)
    x_line = session.codec.encode(line.w)
    X = np.stack([x_line + req.guidance.gp_jitter * r.standard_normal(len(x_line))
                  for r in _rngs(req.seed, req.batch_size)])
    return run.finish(run.descend(X, req.guidance.gradient_budget), started)


PLAN_FUNCTIONS = {
    "dprior": dprior_plan,
    "mpd": mpd_plan,
    "dprior-cost": dprior_cost_plan,
    "gp-cost": gp_prior_cost_plan,
}


def plan(session: PlanningSession, req: PlanRequest) -> PlanResult:
    return PLAN_FUNCTIONS[req.planner](session, req)


def select_trajectory(result: PlanResult, rule: str = "length", model=None, goal=None) -> int:
    """Best valid trajectory by path length or EE pose error; lowest collision cost when none is valid."""
    if not result.dense:
        raise PreconditionError("cannot select from an empty result")
    valid = np.asarray(result.valid, dtype=bool)
    if not valid.any():
        collision = [c.get("collision", 0.0) + c.get("self_collision", 0.0) for c in result.costs]
        return int(np.argmin(collision))
    if rule == "ee_error":
        if model is None or not isinstance(goal, EePose2):
            raise PreconditionError("selecting by EE error needs the robot model and an EE goal")
        score = [sum(pose_errors(d, goal, model)) for d in result.dense]
    else:
        score = [path_and_smoothness(d)[0] for d in result.dense]
    score = np.where(valid, score, np.inf)
    return int(np.argmin(score))


def result_document(result: PlanResult, task: str, robot: RobotConfig, duration: float,
                    include_timing: bool = False) -> PlanResultDoc:
    docs = [
        TrajectoryDoc(valid=bool(v), control_points=t.w.tolist(), q=d.q.tolist(), costs=c, grad_evals=int(g))
        for t, d, v, c, g in zip(result.trajectories, result.dense, result.valid, result.costs, result.grad_evals)
    ]
    return PlanResultDoc(
        planner=result.planner, task=task, context=result.context, robot=robot, duration=duration,
        selected=result.selected, selected_valid=result.selected_valid, trajectories=docs,
        timing=dict(result.timing) if include_timing else None,
    )
