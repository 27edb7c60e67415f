import pytest

from env import preset_scene
from errors import PreconditionError
from models.config_model import RobotConfig
from models.plan_model import PlanningContext, PlanResultDoc, TrajectoryDoc
from svg_utils import INVALID, VALID, render_svg


def _doc(q_rows, valid, robot=None, context=None):
    robot = robot or RobotConfig()
    context = context or PlanningContext(q_start=[-0.8, 0.0], q_goal=[0.8, 0.0])
    trajs = [TrajectoryDoc(valid=v, control_points=[], q=q, costs={}, grad_evals=0) for q, v in zip(q_rows, valid)]
    return PlanResultDoc(planner="mpd", task="unit", context=context, robot=robot, duration=5.0, selected=0,
                         selected_valid=valid[0], trajectories=trajs)


def test_scene_only():
    svg = render_svg(preset_scene("EnvSimple2D"))
    assert "<svg" in svg and svg.rstrip().endswith("</svg>")
    assert svg.count('id="obstacle-') == 6
    assert svg.count('id="extra-obstacle-') == 3
    assert 'id="trajectory-' not in svg


def test_output_is_byte_stable():
    scene = preset_scene("EnvSimple2D")
    doc = _doc([[[-0.8, 0.0], [0.8, 0.0]]], [True])
    assert render_svg(scene, doc) == render_svg(scene, doc)


def test_trajectories_are_colored_by_validity():
    line = [[-0.8, 0.0], [0.0, 0.5], [0.8, 0.0]]
    svg = render_svg(preset_scene("EnvEmpty2D"), _doc([line, line], [True, False]))
    assert svg.count('id="trajectory-') == 2
    assert f"stroke: {VALID}" in svg and f"stroke: {INVALID}" in svg
    # invalid trajectories are drawn first
    assert svg.index('id="trajectory-invalid-1"') < svg.index('id="trajectory-valid-0"')
    assert 'id="start"' in svg and 'id="goal"' in svg


def test_arm_start_and_goal_are_drawn_as_links():
    robot = RobotConfig(kind="planar_chain", link_lengths=[0.5, 0.4], q_min=[-3.0, -3.0], q_max=[3.0, 3.0],
                        v_max=[1.0, 1.0], a_max=[2.0, 2.0])
    ctx = PlanningContext(q_start=[0.0, 0.5], q_goal=[1.0, -0.5])
    svg = render_svg(preset_scene("EnvEmpty2D"), _doc([[[0.0, 0.5], [1.0, -0.5]]], [True], robot, ctx))
    assert 'id="start-arm"' in svg and 'id="goal-arm"' in svg and 'id="goal"' in svg


def test_dof_mismatch():
    with pytest.raises(PreconditionError):
        render_svg(preset_scene("EnvEmpty2D"), _doc([[[0.0, 0.0, 0.0]]], [True]))
