import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from bspline import DenseTrajectory, JointLimits, phase_space_limits
from errors import PreconditionError, ShapeError
from models.config_model import RobotConfig

logger = logging.getLogger(__name__)

POINT_MASS = "point_mass_2d"
PLANAR_CHAIN = "planar_chain"


def wrap_angle(angle):
    """Wrap to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2 * np.pi)


@dataclass(frozen=True)
class EePose2:
    position: np.ndarray
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "angle", float(wrap_angle(self.angle)))


@dataclass(frozen=True)
class JacobianSet:
    spheres: np.ndarray
    ee_position: np.ndarray
    ee_orientation: Optional[np.ndarray]


@dataclass(frozen=True)
class RobotModel:
    kind: str
    link_lengths: np.ndarray
    sphere_link: np.ndarray
    sphere_fraction: np.ndarray
    sphere_radii: np.ndarray
    limits: JointLimits
    self_collision_pairs: np.ndarray

    def __post_init__(self):
        if np.any(self.sphere_radii <= 0):
            raise PreconditionError("collision sphere radii must be positive")
        if len(self.self_collision_pairs):
            links = self.sphere_link[self.self_collision_pairs]
            if np.any(np.abs(links[:, 0] - links[:, 1]) < 2):
                raise PreconditionError("self-collision pairs must lie on non-adjacent links")

    @property
    def dof(self) -> int:
        return 2 if self.kind == POINT_MASS else len(self.link_lengths)

    @property
    def n_spheres(self) -> int:
        return len(self.sphere_radii)

    @property
    def has_orientation(self) -> bool:
        return self.kind == PLANAR_CHAIN


def make_point_mass(limits: JointLimits, radius: float = 0.05) -> RobotModel:
    return RobotModel(
        kind=POINT_MASS,
        link_lengths=np.zeros(0),
        sphere_link=np.zeros(1, dtype=int),
        sphere_fraction=np.zeros(1),
        sphere_radii=np.array([float(radius)]),
        limits=limits,
        self_collision_pairs=np.zeros((0, 2), dtype=int),
    )


def make_planar_chain(link_lengths: Sequence[float], limits: JointLimits,
                      fractions: Sequence[float] = (0.25, 0.5, 0.75),
                      radius_scale: float = 0.08) -> RobotModel:
    lengths = np.asarray(link_lengths, dtype=float)
    links, fracs = [], []
    for k in range(len(lengths)):
        links += [k] * len(fractions)
        fracs += list(fractions)
    # tip sphere on the end effector
    links.append(len(lengths) - 1)
    fracs.append(1.0)
    links = np.asarray(links, dtype=int)
    pairs = [(i, j) for i, j in itertools.combinations(range(len(links)), 2) if abs(links[i] - links[j]) >= 2]
    return RobotModel(
        kind=PLANAR_CHAIN,
        link_lengths=lengths,
        sphere_link=links,
        sphere_fraction=np.asarray(fracs, dtype=float),
        sphere_radii=radius_scale * lengths[links],
        limits=limits,
        self_collision_pairs=np.asarray(pairs, dtype=int).reshape(-1, 2),
    )


def make_robot(config: RobotConfig) -> RobotModel:
    limits = JointLimits(q_min=config.q_min, q_max=config.q_max, v_max=config.v_max, a_max=config.a_max)
    if config.kind == POINT_MASS:
        return make_point_mass(limits, radius=config.point_radius)
    return make_planar_chain(config.link_lengths, limits, config.sphere_fractions, config.sphere_radius_scale)


def _check_dof(model: RobotModel, q: np.ndarray):
    if q.shape[-1] != model.dof:
        raise ShapeError(f"configuration has {q.shape[-1]} entries, robot has {model.dof} dof")


def _chain_frames(model: RobotModel, q: np.ndarray):
    """Link base positions (..., d, 2) and link vectors (..., d, 2)."""
    theta = np.cumsum(q, axis=-1)
    seg = np.stack([np.cos(theta), np.sin(theta)], axis=-1) * model.link_lengths[:, None]
    ends = np.cumsum(seg, axis=-2)
    bases = np.concatenate([np.zeros(seg.shape[:-2] + (1, 2)), ends[..., :-1, :]], axis=-2)
    return bases, seg


def fk_spheres(model: RobotModel, q) -> np.ndarray:
    """Sphere centers (..., S, 2) for configurations (..., d)."""
    q = np.asarray(q, dtype=float)
    _check_dof(model, q)
    if model.kind == POINT_MASS:
        return q[..., None, :]
    bases, seg = _chain_frames(model, q)
    link = model.sphere_link
    return bases[..., link, :] + model.sphere_fraction[:, None] * seg[..., link, :]


def fk_ee_position(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    _check_dof(model, q)
    if model.kind == POINT_MASS:
        return q
    bases, seg = _chain_frames(model, q)
    return bases[..., -1, :] + seg[..., -1, :]


def fk_ee_pose(model: RobotModel, q) -> EePose2:
    if not model.has_orientation:
        raise PreconditionError("a point mass has no end-effector orientation")
    q = np.asarray(q, dtype=float)
    return EePose2(position=fk_ee_position(model, q), angle=float(np.sum(q)))


def sphere_jacobians(model: RobotModel, q) -> np.ndarray:
    """Position Jacobians (..., S, 2, d) of every sphere center."""
    q = np.asarray(q, dtype=float)
    _check_dof(model, q)
    if model.kind == POINT_MASS:
        return np.broadcast_to(np.eye(2), q.shape[:-1] + (1, 2, 2)).copy()
    bases, _ = _chain_frames(model, q)
    centers = fk_spheres(model, q)
    rel = centers[..., :, None, :] - bases[..., None, :, :]
    J = np.stack([-rel[..., 1], rel[..., 0]], axis=-2)
    # joint j only moves spheres on link j and beyond
    mask = np.arange(model.dof)[None, :] <= model.sphere_link[:, None]
    return J * mask[:, None, :]


def ee_jacobian(model: RobotModel, q) -> np.ndarray:
    """EE position Jacobian (..., 2, d)."""
    q = np.asarray(q, dtype=float)
    _check_dof(model, q)
    if model.kind == POINT_MASS:
        return np.broadcast_to(np.eye(2), q.shape[:-1] + (2, 2)).copy()
    bases, _ = _chain_frames(model, q)
    rel = fk_ee_position(model, q)[..., None, :] - bases
    return np.stack([-rel[..., 1], rel[..., 0]], axis=-2)


def jacobians(model: RobotModel, q) -> JacobianSet:
    q = np.asarray(q, dtype=float)
    _check_dof(model, q)
    orientation = np.ones(model.dof) if model.has_orientation else None
    return JacobianSet(spheres=sphere_jacobians(model, q), ee_position=ee_jacobian(model, q),
                       ee_orientation=orientation)


def self_collision_free(model: RobotModel, centers: np.ndarray) -> np.ndarray:
    """Per-configuration flag for centers (..., S, 2); touching spheres count as free."""
    if not len(model.self_collision_pairs):
        return np.ones(centers.shape[:-2], dtype=bool)
    i, j = model.self_collision_pairs.T
    dist = np.linalg.norm(centers[..., i, :] - centers[..., j, :], axis=-1)
    return np.all(dist >= model.sphere_radii[i] + model.sphere_radii[j], axis=-1)


def config_valid(model: RobotModel, sdf, q) -> np.ndarray:
    """Position limits, environment clearance and self-collision for configurations (..., d)."""
    q = np.asarray(q, dtype=float)
    in_limits = np.all((q >= model.limits.q_min) & (q <= model.limits.q_max), axis=-1)
    centers = fk_spheres(model, q)
    dist, _ = sdf.query(centers)
    clear = np.all(dist >= model.sphere_radii, axis=-1)
    return in_limits & clear & self_collision_free(model, centers)


def within_limits(model: RobotModel, dense: DenseTrajectory, margin: float = 0.0) -> bool:
    ph, T = phase_space_limits(model.limits, dense.T), dense.T
    pos_ok = np.all((dense.q >= ph.q_min + margin) & (dense.q <= ph.q_max - margin))
    vel_ok = np.all(np.abs(dense.dq_phase) <= ph.dq_max - margin * T)
    acc_ok = np.all(np.abs(dense.ddq_phase) <= ph.ddq_max - margin * T ** 2)
    return bool(pos_ok and vel_ok and acc_ok)


def link_points(model: RobotModel, q) -> np.ndarray:
    """Base, joint and EE positions (..., d + 1, 2) of a planar chain."""
    q = np.asarray(q, dtype=float)
    _check_dof(model, q)
    if model.kind == POINT_MASS:
        return q[..., None, :]
    bases, seg = _chain_frames(model, q)
    return np.concatenate([bases, bases[..., -1:, :] + seg[..., -1:, :]], axis=-2)
