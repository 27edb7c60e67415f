import hashlib

import numpy as np
import pytest

from datagen import (
    gp_bridge, generate_dataset, generate_gp_demonstrations, path_length, path_valid, read_dataset,
    rrt_connect, sample_context, shortcut, write_dataset,
)
from env import build_sdf_grid, preset_scene
from errors import DatasetFormatError, GenerationError, PreconditionError
from models.config_model import DatagenConfig, RobotConfig
from models.scene_model import Scene
from robot import config_valid, fk_ee_pose, make_robot

SMALL = DatagenConfig(n_contexts=6, seed=7, max_iters=5000, shortcut_rounds=30, path_points=32, min_success=0.5)


def test_empty_workspace_connects_directly(point_mass):
    sdf = build_sdf_grid(Scene(), 32)
    path = rrt_connect(sdf, point_mass, [-0.8, -0.8], [0.8, 0.7], 0.05, 100, np.random.default_rng(0))
    assert path is not None
    np.testing.assert_allclose(path, [[-0.8, -0.8], [0.8, 0.7]])


def test_start_in_collision_is_a_precondition_error(point_mass):
    sdf = build_sdf_grid(preset_scene("EnvSimple2D"), 64)
    with pytest.raises(PreconditionError):
        rrt_connect(sdf, point_mass, [0.0, -0.05], [0.8, 0.8], 0.05, 100, np.random.default_rng(0))


def test_narrow_passage_path_is_valid(point_mass):
    sdf = build_sdf_grid(preset_scene("EnvNarrowPassageDense2D"), 128)
    rng = np.random.default_rng(3)
    path = rrt_connect(sdf, point_mass, [-0.8, 0.0], [0.8, 0.0], 0.05, 20_000, rng)
    assert path is not None
    np.testing.assert_allclose(path[0], [-0.8, 0.0])
    np.testing.assert_allclose(path[-1], [0.8, 0.0])
    assert path_valid(point_mass, sdf, path, 0.0125)


def test_blocked_goal_returns_none(point_mass):
    walls = Scene(obstacles=[
        {"type": "box", "center": (0.0, 0.0), "half_extents": (0.05, 1.0)},
    ])
    sdf = build_sdf_grid(walls, 64)
    assert rrt_connect(sdf, point_mass, [-0.5, 0.0], [0.5, 0.0], 0.05, 200, np.random.default_rng(0)) is None


def test_shortcut_straightens_a_zigzag(point_mass):
    sdf = build_sdf_grid(Scene(), 32)
    zigzag = np.array([[-0.8, 0.0], [-0.4, 0.4], [0.0, -0.4], [0.4, 0.4], [0.8, 0.0]])
    out = shortcut(zigzag, sdf, point_mass, 50, np.random.default_rng(0), 0.01)
    assert path_length(out) < path_length(zigzag)
    assert path_valid(point_mass, sdf, out, 0.01)


def test_shortcut_keeps_a_straight_path(point_mass):
    sdf = build_sdf_grid(Scene(), 32)
    line = np.linspace([-0.8, 0.0], [0.8, 0.0], 6)
    out = shortcut(line, sdf, point_mass, 50, np.random.default_rng(0), 0.01)
    assert path_length(out) == pytest.approx(path_length(line))


def test_sample_context_respects_separation_and_validity(point_mass):
    sdf = build_sdf_grid(preset_scene("EnvSimple2D"), 64)
    rng = np.random.default_rng(0)
    for _ in range(10):
        ctx = sample_context(point_mass, sdf, rng, min_separation=0.8)
        pair = np.array([ctx.q_start, ctx.q_goal])
        assert np.linalg.norm(pair[1] - pair[0]) >= 0.8
        assert np.all(config_valid(point_mass, sdf, pair))


def test_ee_contexts_store_the_goal_pose(two_link, empty_scene):
    sdf = build_sdf_grid(empty_scene, 32)
    ctx = sample_context(two_link, sdf, np.random.default_rng(0), goal_mode="ee")
    pose = fk_ee_pose(two_link, ctx.q_goal)
    assert ctx.goal_mode == "ee"
    np.testing.assert_allclose(ctx.ee_goal.position, pose.position)
    assert ctx.ee_goal.angle == pytest.approx(pose.angle)


def test_dataset_is_deterministic_and_valid(tmp_path):
    scene = preset_scene("EnvSimple2D")
    robot = RobotConfig()
    first = generate_dataset(scene, robot, SMALL, "simple", sdf_resolution=64)
    second = generate_dataset(scene, robot, SMALL, "simple", sdf_resolution=64)
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_dataset(a, first)
    write_dataset(b, second)
    assert hashlib.sha256(a.read_bytes()).hexdigest() == hashlib.sha256(b.read_bytes()).hexdigest()

    header = first.header
    assert header.scene_hash == scene.scene_hash()
    assert header.n_succeeded <= header.n_records <= 2 * header.n_succeeded
    for record in first.records:
        path = np.asarray(record.path)
        assert len(path) == SMALL.path_points
        np.testing.assert_allclose(path[0], record.context.q_start, atol=1e-12)
        np.testing.assert_allclose(path[-1], record.context.q_goal, atol=1e-12)


def test_round_trip(tmp_path):
    dataset = generate_dataset(Scene(), RobotConfig(), SMALL, "empty", sdf_resolution=32)
    path = tmp_path / "data.jsonl"
    write_dataset(path, dataset)
    again = read_dataset(path)
    assert again.header == dataset.header
    assert again.records == dataset.records


def test_truncated_file_names_last_good_line(tmp_path):
    dataset = generate_dataset(Scene(), RobotConfig(), SMALL, "empty", sdf_resolution=32)
    path = tmp_path / "data.jsonl"
    write_dataset(path, dataset)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:3] + [lines[3][:20]]) + "\n")
    with pytest.raises(DatasetFormatError, match="line 4.*last good line is 3"):
        read_dataset(path)
    path.write_text("\n".join(lines[:3]) + "\n")
    with pytest.raises(DatasetFormatError, match="last good line is 3"):
        read_dataset(path)


def test_schema_version_checked(tmp_path):
    dataset = generate_dataset(Scene(), RobotConfig(), SMALL, "empty", sdf_resolution=32)
    path = tmp_path / "data.jsonl"
    write_dataset(path, dataset)
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"schema_version":1', '"schema_version":2')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetFormatError, match="schema version 2"):
        read_dataset(path)


def test_unsolvable_contexts_fail_generation():
    walls = Scene(obstacles=[{"type": "box", "center": (0.0, 0.0), "half_extents": (0.05, 1.0)}])
    cfg = DatagenConfig(n_contexts=20, seed=0, max_iters=50, min_separation=1.6, reverse_connect=False,
                         min_success=1.0)
    with pytest.raises(GenerationError):
        generate_dataset(walls, RobotConfig(), cfg, sdf_resolution=32)


def test_gp_bridge_pins_both_ends():
    path = gp_bridge(np.array([-0.5, 0.0]), np.array([0.5, 0.2]), 40, 0.3, np.random.default_rng(0))
    np.testing.assert_allclose(path[0], [-0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(path[-1], [0.5, 0.2], atol=1e-12)


def test_gp_demonstrations_are_valid():
    scene = preset_scene("EnvSquare2D")
    cfg = SMALL.model_copy(update={"generator": "gp", "gp_amplitude": 0.1})
    dataset = generate_gp_demonstrations(scene, RobotConfig(), cfg, "square", sdf_resolution=32)
    assert dataset.header.generator == "gp"
    model, sdf = make_robot(RobotConfig()), build_sdf_grid(scene, 32, include_extra=False)
    for record in dataset.records:
        assert path_valid(model, sdf, np.asarray(record.path), 0.0125)
