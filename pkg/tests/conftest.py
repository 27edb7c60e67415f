import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from bspline import BsplineSpec, JointLimits, basis_matrices  # noqa: E402
from diffusion import cosine_schedule  # noqa: E402
from models.config_model import RobotConfig  # noqa: E402
from models.scene_model import Scene  # noqa: E402
from nn import Checkpoint, DenoiserArch, Normalizer, context_dim, init_params  # noqa: E402
from robot import make_planar_chain, make_point_mass  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run tests that train a model")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: trains a small model end to end")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def limits_2d():
    return JointLimits(q_min=[-1.0, -1.0], q_max=[1.0, 1.0], v_max=[1.0, 1.0], a_max=[2.0, 2.0])


@pytest.fixture
def point_mass(limits_2d):
    return make_point_mass(limits_2d, radius=0.05)


@pytest.fixture
def two_link():
    limits = JointLimits(q_min=[-np.pi, -np.pi], q_max=[np.pi, np.pi], v_max=[1.5, 1.5], a_max=[3.0, 3.0])
    return make_planar_chain([0.45, 0.45], limits)


@pytest.fixture
def four_link():
    limits = JointLimits(q_min=[-np.pi] * 4, q_max=[np.pi] * 4, v_max=[1.5] * 4, a_max=[3.0] * 4)
    return make_planar_chain([0.22] * 4, limits)


@pytest.fixture
def small_spec():
    return BsplineSpec(degree=5, n_b=12, n_s=64)


@pytest.fixture
def small_basis(small_spec):
    return basis_matrices(small_spec)


@pytest.fixture
def empty_scene():
    return Scene(name="empty")


def build_checkpoint(scene: Scene, spec: BsplineSpec, robot: RobotConfig = None, goal_mode: str = "config",
                     width: int = 16, n_blocks: int = 1, n_steps: int = 10, seed: int = 0,
                     duration: float = 10.0) -> Checkpoint:
    """Untrained checkpoint with symmetric normalizers, enough to drive the planners."""
    robot = robot or RobotConfig()
    dof = robot.dof
    n_free = spec.n_b - 2 * spec.n_pinned + (1 if goal_mode == "ee" else 0)
    arch = DenoiserArch(state_dim=n_free * dof, context_dim=context_dim(dof, goal_mode), width=width,
                        n_blocks=n_blocks, time_dim=8, context_hidden=16, context_out=8)
    c_dim = arch.context_dim
    return Checkpoint(
        params=init_params(arch, np.random.default_rng(seed)),
        arch=arch,
        state_normalizer=Normalizer(low=np.full(arch.state_dim, -1.0), high=np.full(arch.state_dim, 1.0)),
        context_normalizer=Normalizer(low=np.full(c_dim, -np.pi), high=np.full(c_dim, np.pi)),
        schedule=cosine_schedule(n_steps).to_dict(),
        bspline={"degree": spec.degree, "n_b": spec.n_b, "n_s": spec.n_s, "parametrization": spec.parametrization},
        duration=duration,
        robot=robot.model_dump(),
        scene_hash=scene.scene_hash(),
        goal_mode=goal_mode,
        task="test",
    )
