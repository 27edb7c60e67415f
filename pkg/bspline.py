import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from errors import PreconditionError, ShapeError

logger = logging.getLogger(__name__)

RIDGE = 1e-8


@dataclass(frozen=True)
class JointLimits:
    q_min: np.ndarray
    q_max: np.ndarray
    v_max: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        for name in ("q_min", "q_max", "v_max", "a_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(self.q_min < self.q_max):
            raise PreconditionError("joint limits need q_min < q_max for every joint")
        if np.any(self.v_max <= 0) or np.any(self.a_max <= 0):
            raise PreconditionError("velocity and acceleration limits must be positive")


@dataclass(frozen=True)
class PhaseLimits:
    q_min: np.ndarray
    q_max: np.ndarray
    dq_max: np.ndarray
    ddq_max: np.ndarray


@dataclass(frozen=True)
class BsplineSpec:
    """Trajectory space: `n_b` control points of a clamped degree-`degree` spline
    evaluated on `n_s` uniform phase samples. With `parametrization="waypoints"`
    the rows are waypoints joined by straight segments instead."""

    degree: int = 5
    n_b: int = 22
    n_s: int = 128
    parametrization: str = "bspline"

    def __post_init__(self):
        if self.parametrization not in ("bspline", "waypoints"):
            raise PreconditionError(f"unknown parametrization {self.parametrization!r}")
        if self.degree < 1:
            raise PreconditionError("degree must be a positive integer")
        if self.n_b <= self.effective_degree:
            raise PreconditionError(f"n_b={self.n_b} must exceed the degree {self.effective_degree}")
        if self.n_s < 2:
            raise PreconditionError("need at least two phase samples")

    @property
    def effective_degree(self) -> int:
        return 1 if self.parametrization == "waypoints" else self.degree

    @property
    def knots(self) -> np.ndarray:
        return make_clamped_knots(self.effective_degree, self.n_b)

    @property
    def s_grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_s)

    @property
    def n_pinned(self) -> int:
        # three equal rows zero the first two derivatives of a clamped spline
        return 1 if self.parametrization == "waypoints" else 3


@dataclass(frozen=True)
class BasisMatrices:
    B: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    s_grid: np.ndarray

    def __post_init__(self):
        for arr in (self.B, self.B1, self.B2, self.s_grid):
            arr.setflags(write=False)

    @property
    def n_s(self) -> int:
        return self.B.shape[0]

    @property
    def n_b(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ControlTrajectory:
    w: np.ndarray
    T: float

    def __post_init__(self):
        w = np.array(self.w, dtype=float)
        if w.ndim != 2:
            raise ShapeError(f"control points must be a (n_b, d) matrix, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise PreconditionError("control points must be finite")
        if not self.T > 0:
            raise PreconditionError(f"trajectory duration must be positive, got {self.T}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "T", float(self.T))

    @property
    def n_b(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class DenseTrajectory:
    q: np.ndarray
    dq: np.ndarray
    ddq: np.ndarray
    dq_phase: np.ndarray
    ddq_phase: np.ndarray
    T: float

    @property
    def n_s(self) -> int:
        return self.q.shape[0]


class FitResult(NamedTuple):
    trajectory: ControlTrajectory
    regularized: bool


def make_clamped_knots(p: int, n_b: int) -> np.ndarray:
    if p < 1:
        raise PreconditionError(f"degree must be positive, got {p}")
    if n_b <= p:
        raise PreconditionError(f"need more control points than the degree (n_b={n_b}, p={p})")
    interior = np.arange(1, n_b - p) / (n_b - p)
    return np.concatenate([np.zeros(p + 1), interior, np.ones(p + 1)])


def _basis(knots: np.ndarray, degree: int, s: np.ndarray) -> np.ndarray:
    """Cox-de Boor recursion for all basis functions at once, 0/0 taken as 0."""
    s = np.clip(np.asarray(s, dtype=float), knots[0], knots[-1])
    left, right = knots[:-1], knots[1:]
    N = ((s[:, None] >= left) & (s[:, None] < right)).astype(float)
    # s = 1 belongs to the last non-empty span
    last_span = np.nonzero(left < right)[0][-1]
    at_end = s >= knots[-1]
    N[at_end] = 0.0
    N[at_end, last_span] = 1.0

    for k in range(1, degree + 1):
        n = len(knots) - 1 - k
        den_a = knots[k:k + n] - knots[:n]
        den_b = knots[k + 1:k + 1 + n] - knots[1:1 + n]
        a = np.divide(s[:, None] - knots[:n], den_a,
                      out=np.zeros((len(s), n)), where=den_a > 0)
        b = np.divide(knots[k + 1:k + 1 + n] - s[:, None], den_b,
                      out=np.zeros((len(s), n)), where=den_b > 0)
        N = a * N[:, :n] + b * N[:, 1:n + 1]
    return N


def _derivative_operator(knots: np.ndarray, degree: int, n: int) -> np.ndarray:
    """(n-1, n) map from control points of a spline to those of its derivative."""
    span = knots[degree + 1:degree + n] - knots[1:n]
    coeff = np.divide(float(degree), span, out=np.zeros(n - 1), where=span > 0)
    D = np.zeros((n - 1, n))
    rows = np.arange(n - 1)
    D[rows, rows] = -coeff
    D[rows, rows + 1] = coeff
    return D


def _finite_difference_matrix(n: int, h: float) -> np.ndarray:
    F = np.zeros((n, n))
    rows = np.arange(1, n - 1)
    F[rows, rows - 1] = -0.5 / h
    F[rows, rows + 1] = 0.5 / h
    F[0, :2] = (-1.0 / h, 1.0 / h)
    F[-1, -2:] = (-1.0 / h, 1.0 / h)
    return F


def position_basis(spec: BsplineSpec, s: np.ndarray) -> np.ndarray:
    return _basis(spec.knots, spec.effective_degree, s)


def basis_matrices(spec: BsplineSpec) -> BasisMatrices:
    if spec.parametrization == "waypoints":
        return waypoint_basis_matrices(spec.n_b, spec.n_s)

    u, p, s = spec.knots, spec.degree, spec.s_grid
    B = _basis(u, p, s)
    D1 = _derivative_operator(u, p, spec.n_b)
    B1 = _basis(u[1:-1], p - 1, s) @ D1
    if p >= 2:
        D2 = _derivative_operator(u[1:-1], p - 1, spec.n_b - 1)
        B2 = _basis(u[2:-2], p - 2, s) @ D2 @ D1
    else:
        B2 = np.zeros_like(B)
    return BasisMatrices(B=B, B1=B1, B2=B2, s_grid=s)


def waypoint_basis_matrices(n_w: int, n_s: int) -> BasisMatrices:
    """Waypoints joined linearly; derivatives are finite differences of the dense path."""
    s = np.linspace(0.0, 1.0, n_s)
    B = _basis(make_clamped_knots(1, n_w), 1, s)
    F = _finite_difference_matrix(n_s, 1.0 / (n_s - 1))
    return BasisMatrices(B=B, B1=F @ B, B2=F @ F @ B, s_grid=s)


def pin_boundaries(traj: ControlTrajectory, q_start, q_goal=None, n_pinned: int = 3) -> ControlTrajectory:
    """Pin the first `n_pinned` rows to q_start and the last ones to q_goal.

    Without a goal configuration the end rows repeat the final control point.
    """
    q_start = np.asarray(q_start, dtype=float)
    if q_start.shape != (traj.d,):
        raise ShapeError(f"q_start has shape {q_start.shape}, trajectory has {traj.d} dof")
    if traj.n_b < 2 * n_pinned + 1:
        raise PreconditionError(f"pinning {n_pinned} rows at each end needs n_b >= {2 * n_pinned + 1}")
    w = traj.w.copy()
    if q_goal is None:
        end = w[-1].copy()
    else:
        end = np.asarray(q_goal, dtype=float)
        if end.shape != (traj.d,):
            raise ShapeError(f"q_goal has shape {end.shape}, trajectory has {traj.d} dof")
    w[:n_pinned] = q_start
    w[-n_pinned:] = end
    return ControlTrajectory(w, traj.T)


def interpolate(traj: ControlTrajectory, basis: BasisMatrices) -> DenseTrajectory:
    if traj.n_b != basis.n_b:
        raise ShapeError(f"trajectory has {traj.n_b} control points, basis expects {basis.n_b}")
    q = basis.B @ traj.w
    dq_phase = basis.B1 @ traj.w
    ddq_phase = basis.B2 @ traj.w
    # linear phase: r(s) = 1/T, dr/ds = 0
    return DenseTrajectory(
        q=q,
        dq=dq_phase / traj.T,
        ddq=ddq_phase / traj.T ** 2,
        dq_phase=dq_phase,
        ddq_phase=ddq_phase,
        T=traj.T,
    )


def fit_control_points(path, spec: BsplineSpec, q_start=None, q_goal=None, T: float = 1.0) -> FitResult:
    """Least squares on the inner control points; boundary rows pinned to the path ends."""
    path = np.asarray(path, dtype=float)
    if path.ndim != 2:
        raise ShapeError(f"path must be (L, d), got shape {path.shape}")
    L, d = path.shape
    if L < spec.n_b:
        raise PreconditionError(f"path has {L} samples, fitting {spec.n_b} control points needs at least as many")
    q_start = path[0] if q_start is None else np.asarray(q_start, dtype=float)
    q_goal = path[-1] if q_goal is None else np.asarray(q_goal, dtype=float)

    k = spec.n_pinned
    A = position_basis(spec, np.linspace(0.0, 1.0, L))
    pinned = np.zeros((spec.n_b, d))
    pinned[:k] = q_start
    pinned[-k:] = q_goal
    free = slice(k, spec.n_b - k)

    A_free = A[:, free]
    AtA = A_free.T @ A_free
    Atb = A_free.T @ (path - A @ pinned)
    regularized = np.linalg.matrix_rank(AtA) < AtA.shape[0]
    if regularized:
        logger.warning("rank-deficient fit on a %d-sample path; adding ridge %.0e", L, RIDGE)
        AtA = AtA + RIDGE * np.eye(AtA.shape[0])

    w = pinned.copy()
    w[free] = np.linalg.solve(AtA, Atb)
    traj = pin_boundaries(ControlTrajectory(w, T), q_start, q_goal, n_pinned=k)
    return FitResult(traj, bool(regularized))


def resample_path(path, n: int) -> np.ndarray:
    """Resample a polyline to `n` points evenly spaced in arc length."""
    path = np.asarray(path, dtype=float)
    seg = np.linalg.norm(np.diff(path, axis=0), axis=1)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    if arc[-1] <= 0.0:
        return np.repeat(path[:1], n, axis=0)
    targets = np.linspace(0.0, arc[-1], n)
    return np.stack([np.interp(targets, arc, path[:, j]) for j in range(path.shape[1])], axis=1)


def phase_space_limits(limits: JointLimits, T: float) -> PhaseLimits:
    if not T > 0:
        raise PreconditionError(f"duration must be positive, got {T}")
    return PhaseLimits(
        q_min=limits.q_min,
        q_max=limits.q_max,
        dq_max=limits.v_max * T,
        ddq_max=limits.a_max * T ** 2,
    )
