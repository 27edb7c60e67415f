import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np

from bspline import BasisMatrices, ControlTrajectory, DenseTrajectory, interpolate
from errors import CostError, ShapeError
from models.config_model import CostWeights
from robot import (
    EePose2, RobotModel, ee_jacobian, fk_ee_pose, fk_spheres, self_collision_free,
    sphere_jacobians, within_limits, wrap_angle,
)

logger = logging.getLogger(__name__)

TERMS = ("collision", "self_collision", "limits", "task", "velocity", "acceleration")
WEIGHT_FIELD = {
    "collision": "collision",
    "self_collision": "collision",
    "limits": "limits",
    "task": "task",
    "velocity": "velocity",
    "acceleration": "acceleration",
}

Goal = Union[EePose2, np.ndarray]


@dataclass
class CostBreakdown:
    values: Dict[str, float]
    total: float
    gradients: Optional[Dict[str, np.ndarray]] = None
    grad_total: Optional[np.ndarray] = None


def env_collision_penalty(dist, radius, margin):
    return np.maximum(-np.asarray(dist) + radius + margin, 0.0)


def limit_penalty(tau, lower, upper, margin=0.0):
    """Squared violation of [lower + margin, upper - margin] and its derivative."""
    tau = np.asarray(tau, dtype=float)
    excess = tau - np.clip(tau, lower + margin, upper - margin)
    return 0.5 * excess ** 2, excess


def goal_mode_of(goal: Goal) -> str:
    return "ee" if isinstance(goal, EePose2) else "config"


def _check_inputs(sdf, model: RobotModel, goal: Goal, weights: CostWeights):
    if sdf is None and weights.collision > 0:
        raise CostError("the collision cost needs an SDF")
    if isinstance(goal, EePose2) and not model.has_orientation:
        raise CostError("an end-effector pose goal needs a robot with orientation")
    if not isinstance(goal, EePose2) and np.shape(goal) != (model.dof,):
        raise ShapeError(f"goal configuration has shape {np.shape(goal)}, robot has {model.dof} dof")


def _terms(q, dqp, ddqp, T, sdf, model: RobotModel, goal: Goal, weights: CostWeights, need_grad: bool):
    """Term values and per-sample sensitivities w.r.t. (q, q', q'') for each term.

    Path terms are averaged over the dense samples. Velocities and accelerations are
    taken in time units, q'/T and q''/T**2, so sensitivities carry the matching 1/T factors.
    """
    n_s, d = q.shape
    scale = 1.0 / n_s
    dq, ddq = dqp / T, ddqp / T ** 2
    zeros = np.zeros((n_s, d))
    values, sens = {}, {}

    values["velocity"] = scale * 0.5 * float(np.sum(dq ** 2))
    sens["velocity"] = (zeros, scale * dq / T, zeros)
    values["acceleration"] = scale * 0.5 * float(np.sum(ddq ** 2))
    sens["acceleration"] = (zeros, zeros, scale * ddq / T ** 2)

    centers = fk_spheres(model, q)
    J = sphere_jacobians(model, q) if need_grad else None

    if sdf is not None:
        dist, normal = sdf.query(centers)
        pen = env_collision_penalty(dist, model.sphere_radii, weights.collision_margin)
        active = pen > 0
        values["collision"] = scale * float(np.sum(pen))
        if need_grad:
            gq = -np.einsum("ns,nsk,nskd->nd", active.astype(float), normal, J)
            sens["collision"] = (scale * gq, zeros, zeros)
    else:
        values["collision"] = 0.0
        sens["collision"] = (zeros, zeros, zeros)

    pairs = model.self_collision_pairs
    if len(pairs):
        i, j = pairs.T
        diff = centers[:, i] - centers[:, j]
        dist = np.linalg.norm(diff, axis=-1)
        pen = -dist + model.sphere_radii[i] + model.sphere_radii[j] + weights.collision_margin
        worst = np.argmax(pen, axis=1)
        rows = np.arange(n_s)
        worst_pen = pen[rows, worst]
        active = worst_pen > 0
        values["self_collision"] = scale * float(np.sum(worst_pen[active]))
        if need_grad:
            u = diff[rows, worst] / np.maximum(dist[rows, worst], 1e-12)[:, None]
            dJ = J[rows, i[worst]] - J[rows, j[worst]]
            gq = -np.einsum("nk,nkd->nd", u, dJ) * active[:, None]
            sens["self_collision"] = (scale * gq, zeros, zeros)
    else:
        values["self_collision"] = 0.0
        sens["self_collision"] = (zeros, zeros, zeros)

    lim, m = model.limits, weights.limit_margin
    pos_pen, pos_g = limit_penalty(q, lim.q_min, lim.q_max, m)
    vel_pen, vel_g = limit_penalty(dq, -lim.v_max, lim.v_max, m)
    acc_pen, acc_g = limit_penalty(ddq, -lim.a_max, lim.a_max, m)
    values["limits"] = scale * float(np.sum(pos_pen) + np.sum(vel_pen) + np.sum(acc_pen))
    sens["limits"] = (scale * pos_g, scale * vel_g / T, scale * acc_g / T ** 2)

    # evaluated at s = 1 only
    g_task = zeros.copy()
    if isinstance(goal, EePose2):
        pose = fk_ee_pose(model, q[-1])
        e_pos = pose.position - goal.position
        e_ang = float(wrap_angle(pose.angle - goal.angle))
        values["task"] = 0.5 * float(e_pos @ e_pos) + 0.5 * e_ang ** 2
        if need_grad:
            g_task[-1] = e_pos @ ee_jacobian(model, q[-1]) + e_ang * np.ones(d)
    else:
        err = q[-1] - np.asarray(goal, dtype=float)
        values["task"] = 0.5 * float(err @ err)
        g_task[-1] = err
    sens["task"] = (g_task, zeros, zeros)
    return values, sens


def _total(values: Dict[str, float], weights: CostWeights) -> float:
    return float(sum(getattr(weights, WEIGHT_FIELD[name]) * values[name] for name in TERMS))


def eval_cost_terms(dense: DenseTrajectory, sdf, model: RobotModel, goal: Goal, weights: CostWeights) -> CostBreakdown:
    _check_inputs(sdf, model, goal, weights)
    values, _ = _terms(dense.q, dense.dq_phase, dense.ddq_phase, dense.T, sdf, model, goal, weights, need_grad=False)
    return CostBreakdown(values=values, total=_total(values, weights))


def project_gradient(grad: np.ndarray, n_pinned: int, goal_mode: str) -> np.ndarray:
    """Zero pinned rows. Under an EE goal the end rows are tied, so they share their summed gradient."""
    g = np.array(grad, dtype=float)
    g[:n_pinned] = 0.0
    if goal_mode == "config":
        g[-n_pinned:] = 0.0
    else:
        g[-n_pinned:] = g[-n_pinned:].sum(axis=0)
    return g


def cost_breakdown(traj: ControlTrajectory, basis: BasisMatrices, sdf, model: RobotModel, goal: Goal,
                   weights: CostWeights, n_pinned: int = 3) -> CostBreakdown:
    _check_inputs(sdf, model, goal, weights)
    dense = interpolate(traj, basis)
    values, sens = _terms(dense.q, dense.dq_phase, dense.ddq_phase, traj.T, sdf, model, goal, weights, need_grad=True)
    mode = goal_mode_of(goal)
    gradients = {}
    for name in TERMS:
        gq, gdq, gddq = sens[name]
        raw = basis.B.T @ gq + basis.B1.T @ gdq + basis.B2.T @ gddq
        gradients[name] = project_gradient(raw, n_pinned, mode)
    grad_total = sum(getattr(weights, WEIGHT_FIELD[name]) * gradients[name] for name in TERMS)
    return CostBreakdown(values=values, total=_total(values, weights), gradients=gradients, grad_total=grad_total)


def grad_total(traj: ControlTrajectory, basis: BasisMatrices, sdf, model: RobotModel, goal: Goal,
               weights: CostWeights, n_pinned: int = 3) -> np.ndarray:
    return cost_breakdown(traj, basis, sdf, model, goal, weights, n_pinned).grad_total


def validity(dense: DenseTrajectory, sdf, model: RobotModel) -> bool:
    centers = fk_spheres(model, dense.q)
    dist, _ = sdf.query(centers)
    clear = bool(np.all(dist >= model.sphere_radii))
    return clear and bool(np.all(self_collision_free(model, centers))) and within_limits(model, dense)


@dataclass
class CostOracle:
    """Cost function bound to one planning problem, counting gradient calls per trajectory."""

    basis: BasisMatrices
    sdf: object
    model: RobotModel
    goal: Goal
    weights: CostWeights
    T: float
    n_pinned: int = 3
    batch_size: int = 1
    grad_evals: np.ndarray = field(init=False)

    def __post_init__(self):
        _check_inputs(self.sdf, self.model, self.goal, self.weights)
        self.grad_evals = np.zeros(self.batch_size, dtype=int)

    @property
    def goal_mode(self) -> str:
        return goal_mode_of(self.goal)

    def breakdown(self, w: np.ndarray) -> CostBreakdown:
        return cost_breakdown(ControlTrajectory(w, self.T), self.basis, self.sdf, self.model, self.goal,
                              self.weights, self.n_pinned)

    def grad_batch(self, W: np.ndarray) -> np.ndarray:
        """Total-cost gradients for control points W (B, n_b, d)."""
        if len(W) != self.batch_size:
            raise ShapeError(f"oracle is bound to {self.batch_size} trajectories, got {len(W)}")
        self.grad_evals += 1
        return np.stack([self.breakdown(w).grad_total for w in W])
