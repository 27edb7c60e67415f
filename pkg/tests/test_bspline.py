import numpy as np
import pytest
from scipy.interpolate import BSpline

from bspline import (
    BsplineSpec, ControlTrajectory, JointLimits, basis_matrices, fit_control_points, interpolate,
    make_clamped_knots, phase_space_limits, pin_boundaries, position_basis, resample_path,
    waypoint_basis_matrices,
)
from errors import PreconditionError, ShapeError


def test_clamped_knots_repeat_ends():
    knots = make_clamped_knots(5, 22)
    assert len(knots) == 22 + 5 + 1
    np.testing.assert_array_equal(knots[:6], 0.0)
    np.testing.assert_array_equal(knots[-6:], 1.0)
    assert np.all(np.diff(knots) >= 0)


@pytest.mark.parametrize("degree,n_b", [(3, 10), (5, 22), (5, 12)])
def test_basis_matches_scipy(degree, n_b):
    spec = BsplineSpec(degree=degree, n_b=n_b, n_s=101)
    basis = basis_matrices(spec)
    ref = BSpline(spec.knots, np.eye(n_b), degree)
    s = spec.s_grid[:-1]
    np.testing.assert_allclose(basis.B[:-1], ref(s), atol=1e-10)
    np.testing.assert_allclose(basis.B1[:-1], ref.derivative(1)(s), atol=1e-8)
    np.testing.assert_allclose(basis.B2[:-1], ref.derivative(2)(s), atol=1e-6)


def test_basis_is_partition_of_unity(small_basis):
    np.testing.assert_allclose(small_basis.B.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(small_basis.B1.sum(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(small_basis.B[-1, -1], 1.0)


def test_basis_matrices_are_read_only(small_basis):
    with pytest.raises(ValueError):
        small_basis.B[0, 0] = 2.0


def test_pinned_trajectory_starts_and_ends_at_rest(small_spec, small_basis):
    rng = np.random.default_rng(0)
    traj = pin_boundaries(ControlTrajectory(rng.uniform(-1, 1, (12, 2)), 10.0), [0.1, -0.2], [0.7, 0.5])
    dense = interpolate(traj, small_basis)
    np.testing.assert_allclose(dense.q[0], [0.1, -0.2], atol=1e-9)
    np.testing.assert_allclose(dense.q[-1], [0.7, 0.5], atol=1e-9)
    for deriv in (dense.dq_phase, dense.ddq_phase):
        np.testing.assert_allclose(deriv[0], 0.0, atol=1e-9)
        np.testing.assert_allclose(deriv[-1], 0.0, atol=1e-9)


def test_pin_without_goal_repeats_last_row():
    w = np.arange(24, dtype=float).reshape(12, 2)
    pinned = pin_boundaries(ControlTrajectory(w, 1.0), [0.0, 0.0])
    np.testing.assert_array_equal(pinned.w[-3:], np.tile(w[-1], (3, 1)))


def test_pin_needs_enough_rows():
    with pytest.raises(PreconditionError):
        pin_boundaries(ControlTrajectory(np.zeros((6, 2)), 1.0), [0.0, 0.0], [1.0, 1.0])


def test_time_derivatives_scale_with_duration(small_basis):
    w = np.random.default_rng(1).normal(size=(12, 2))
    dense = interpolate(ControlTrajectory(w, 4.0), small_basis)
    np.testing.assert_allclose(dense.dq, dense.dq_phase / 4.0)
    np.testing.assert_allclose(dense.ddq, dense.ddq_phase / 16.0)


def test_interpolate_rejects_wrong_basis(small_basis):
    with pytest.raises(ShapeError):
        interpolate(ControlTrajectory(np.zeros((10, 2)), 1.0), small_basis)


def test_control_trajectory_validates():
    with pytest.raises(PreconditionError):
        ControlTrajectory(np.full((12, 2), np.nan), 1.0)
    with pytest.raises(PreconditionError):
        ControlTrajectory(np.zeros((12, 2)), 0.0)
    with pytest.raises(ShapeError):
        ControlTrajectory(np.zeros(12), 1.0)


def test_fit_recovers_spline_samples(small_spec):
    rng = np.random.default_rng(2)
    w_true = pin_boundaries(ControlTrajectory(rng.uniform(-1, 1, (12, 2)), 1.0), [0.0, 0.0], [1.0, 1.0]).w
    path = position_basis(small_spec, np.linspace(0.0, 1.0, 200)) @ w_true
    fit = fit_control_points(path, small_spec)
    assert not fit.regularized
    np.testing.assert_allclose(fit.trajectory.w, w_true, atol=1e-8)


def test_fit_needs_enough_samples(small_spec):
    with pytest.raises(PreconditionError):
        fit_control_points(np.zeros((5, 2)), small_spec)


def test_resample_path_spaces_points_evenly():
    path = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
    out = resample_path(path, 5)
    np.testing.assert_allclose(out, [[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1]], atol=1e-12)
    np.testing.assert_allclose(resample_path(np.zeros((3, 2)), 4), np.zeros((4, 2)))


def test_waypoints_interpolate_linearly():
    basis = waypoint_basis_matrices(5, 9)
    w = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]])
    q = basis.B @ w
    np.testing.assert_allclose(q[::2], w, atol=1e-12)
    np.testing.assert_allclose(basis.B1 @ w, np.tile([4.0, 8.0], (9, 1)), atol=1e-9)
    np.testing.assert_allclose(basis.B2 @ w, 0.0, atol=1e-6)


def test_waypoint_spec_pins_single_row():
    spec = BsplineSpec(n_b=8, n_s=32, parametrization="waypoints")
    assert spec.n_pinned == 1
    assert spec.effective_degree == 1
    assert basis_matrices(spec).B.shape == (32, 8)


def test_unknown_parametrization_rejected():
    with pytest.raises(PreconditionError):
        BsplineSpec(parametrization="fourier")


def test_phase_space_limits_scale_with_duration():
    limits = JointLimits(q_min=[-1.0], q_max=[1.0], v_max=[0.5], a_max=[2.0])
    ph = phase_space_limits(limits, 3.0)
    np.testing.assert_allclose(ph.dq_max, [1.5])
    np.testing.assert_allclose(ph.ddq_max, [18.0])
    with pytest.raises(PreconditionError):
        phase_space_limits(limits, 0.0)
