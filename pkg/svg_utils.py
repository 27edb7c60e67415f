import io
import logging
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib import patches  # noqa: E402

from errors import PreconditionError  # noqa: E402
from models.plan_model import PlanResultDoc  # noqa: E402
from models.scene_model import Box, Scene  # noqa: E402
from robot import POINT_MASS, RobotModel, fk_ee_position, link_points, make_robot  # noqa: E402

logger = logging.getLogger(__name__)

OBSTACLE = "#808080"
EXTRA_OBSTACLE = "#d62728"
VALID = "#ff7f0e"
INVALID = "#000000"
START = "#1f77b4"
GOAL = "#2ca02c"

FIGSIZE = (6, 6)

# fixed ids and no timestamp keep the output byte-stable
plt.rcParams["svg.hashsalt"] = "mpd"
plt.rcParams["svg.fonttype"] = "none"


def _add_primitive(ax, prim, color: str, gid: str):
    if isinstance(prim, Box):
        (cx, cy), (hx, hy) = prim.center, prim.half_extents
        patch = patches.Rectangle((cx - hx, cy - hy), 2 * hx, 2 * hy, facecolor=color, edgecolor="none")
    else:
        patch = patches.Circle(prim.center, prim.radius, facecolor=color, edgecolor="none")
    patch.set_gid(gid)
    ax.add_patch(patch)


def _workspace_path(model: RobotModel, q: np.ndarray) -> np.ndarray:
    return q if model.kind == POINT_MASS else fk_ee_position(model, q)


def _plot(ax, points, color: str, gid: str, **kwargs):
    points = np.asarray(points, dtype=float)
    (line,) = ax.plot(points[:, 0], points[:, 1], color=color, **kwargs)
    line.set_gid(gid)


def _marker(ax, center, radius: float, color: str, gid: str):
    dot = patches.Circle(center, radius, facecolor=color, edgecolor="none", zorder=4)
    dot.set_gid(gid)
    ax.add_patch(dot)


def _draw_plan(ax, scene: Scene, doc: PlanResultDoc):
    model = make_robot(doc.robot)
    qs = [np.asarray(t.q, dtype=float) for t in doc.trajectories]
    if any(q.ndim != 2 or q.shape[1] != model.dof for q in qs):
        raise PreconditionError("render needs planar trajectories matching the stored robot")

    # invalid first so valid paths stay on top
    order = sorted(range(len(qs)), key=lambda k: doc.trajectories[k].valid)
    for k in order:
        valid = doc.trajectories[k].valid
        _plot(ax, _workspace_path(model, qs[k]), VALID if valid else INVALID,
              f"trajectory-{'valid' if valid else 'invalid'}-{k}",
              linewidth=3.0 if k == doc.selected else 1.5, alpha=0.8, zorder=2)

    ctx = doc.context
    marker = 0.025 * (scene.bounds[1][0] - scene.bounds[0][0])
    q_start = np.asarray(ctx.q_start, dtype=float)
    if model.kind == POINT_MASS:
        _marker(ax, q_start, marker, START, "start")
        _marker(ax, np.asarray(ctx.q_goal, dtype=float), marker, GOAL, "goal")
        return
    _plot(ax, link_points(model, q_start), START, "start-arm", linewidth=3.0, zorder=3)
    if ctx.q_goal is not None:
        _plot(ax, link_points(model, np.asarray(ctx.q_goal, dtype=float)), GOAL, "goal-arm", linewidth=3.0, zorder=3)
    goal = ctx.ee_goal.position if ctx.ee_goal is not None else fk_ee_position(model, np.asarray(ctx.q_goal))
    _marker(ax, goal, marker, GOAL, "goal")


def render_svg(scene: Scene, doc: Optional[PlanResultDoc] = None) -> str:
    """Scene obstacles plus, when given, every trajectory of a plan result and its start/goal."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    try:
        for k, prim in enumerate(scene.obstacles):
            _add_primitive(ax, prim, OBSTACLE, f"obstacle-{k}")
        for k, prim in enumerate(scene.extra_obstacles):
            _add_primitive(ax, prim, EXTRA_OBSTACLE, f"extra-obstacle-{k}")
        if doc is not None and doc.trajectories:
            _draw_plan(ax, scene, doc)
        (x0, y0), (x1, y1) = scene.bounds
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_aspect("equal", adjustable="box")
        ax.set_axis_off()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", bbox_inches="tight", metadata={"Date": None})
    finally:
        plt.close(fig)
    return buf.getvalue()
