import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from errors import ConfigError, PreconditionError
from models.scene_model import Box, Circle, Scene

logger = logging.getLogger(__name__)


def analytic_sdf(prim, x) -> np.ndarray:
    """Signed distance from points `x` (..., 2) to one primitive, negative inside."""
    x = np.asarray(x, dtype=float)
    center = np.asarray(prim.center, dtype=float)
    if isinstance(prim, Circle):
        return np.linalg.norm(x - center, axis=-1) - prim.radius
    q = np.abs(x - center) - np.asarray(prim.half_extents, dtype=float)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


def analytic_sdf_gradient(prim, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    rel = x - np.asarray(prim.center, dtype=float)
    if isinstance(prim, Circle):
        norm = np.linalg.norm(rel, axis=-1, keepdims=True)
        fallback = np.broadcast_to(np.array([1.0, 0.0]), rel.shape)
        return np.where(norm > 0, rel / np.where(norm > 0, norm, 1.0), fallback)

    sign = np.where(rel >= 0, 1.0, -1.0)
    q = np.abs(rel) - np.asarray(prim.half_extents, dtype=float)
    pos = np.maximum(q, 0.0)
    pos_norm = np.linalg.norm(pos, axis=-1, keepdims=True)
    outside_grad = sign * pos / np.where(pos_norm > 0, pos_norm, 1.0)
    axis = np.argmax(q, axis=-1)
    inside_grad = sign * (np.arange(2) == axis[..., None])
    return np.where(pos_norm > 0, outside_grad, inside_grad)


@dataclass(frozen=True)
class AnalyticSdf:
    """Exact composed field over primitives; same `query` contract as SdfGrid."""

    primitives: Tuple
    cap: float

    def query(self, x) -> Tuple[np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        if not self.primitives:
            return np.full(x.shape[:-1], self.cap), np.zeros(x.shape)
        values = np.stack([analytic_sdf(p, x) for p in self.primitives])
        grads = np.stack([analytic_sdf_gradient(p, x) for p in self.primitives])
        nearest = np.argmin(values, axis=0)
        value = np.take_along_axis(values, nearest[None], axis=0)[0]
        grad = np.take_along_axis(grads, nearest[None, ..., None], axis=0)[0]
        capped = value > self.cap
        return np.where(capped, self.cap, value), np.where(capped[..., None], 0.0, grad)


@dataclass(frozen=True)
class SdfGrid:
    lower: np.ndarray
    cell_size: np.ndarray
    values: np.ndarray
    gradient: np.ndarray

    @property
    def resolution(self) -> int:
        return self.values.shape[0]

    def cell_centers(self) -> np.ndarray:
        idx = np.arange(self.resolution) + 0.5
        xs = self.lower[0] + idx * self.cell_size[0]
        ys = self.lower[1] + idx * self.cell_size[1]
        return np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)

    def query(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest-cell lookup; points outside the workspace clamp to the border cells."""
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.lower) / self.cell_size).astype(int)
        idx = np.clip(idx, 0, self.resolution - 1)
        ix, iy = idx[..., 0], idx[..., 1]
        return self.values[ix, iy], self.gradient[ix, iy]


def workspace_cap(scene: Scene) -> float:
    lower, upper = np.asarray(scene.bounds, dtype=float)
    return float(np.linalg.norm(upper - lower))


def analytic_field(scene: Scene, include_extra: bool = True) -> AnalyticSdf:
    prims = scene.all_obstacles if include_extra else list(scene.obstacles)
    return AnalyticSdf(primitives=tuple(prims), cap=workspace_cap(scene))


def build_sdf_grid(scene: Scene, resolution: int = 256, include_extra: bool = True) -> SdfGrid:
    if resolution < 16:
        raise PreconditionError(f"SDF resolution must be at least 16, got {resolution}")
    lower, upper = np.asarray(scene.bounds, dtype=float)
    cell = (upper - lower) / resolution
    grid = SdfGrid(lower=lower, cell_size=cell,
                   values=np.empty((resolution, resolution)), gradient=np.empty((resolution, resolution, 2)))
    centers = grid.cell_centers()

    values = np.full((resolution, resolution), workspace_cap(scene))
    prims = scene.all_obstacles if include_extra else list(scene.obstacles)
    for prim in prims:
        values = np.minimum(values, analytic_sdf(prim, centers))

    gx, gy = np.gradient(values, cell[0], cell[1])
    gradient = np.stack([gx, gy], axis=-1)
    norm = np.linalg.norm(gradient, axis=-1, keepdims=True)
    gradient = np.where(norm > 1e-12, gradient / np.where(norm > 1e-12, norm, 1.0), gradient)

    logger.debug("built %dx%d SDF grid over %d primitives", resolution, resolution, len(prims))
    return SdfGrid(lower=lower, cell_size=cell, values=values, gradient=gradient)


def _circles(specs: Sequence) -> list:
    return [Circle(center=(x, y), radius=r) for x, y, r in specs]


def _boxes(specs: Sequence) -> list:
    return [Box(center=(x, y), half_extents=(hx, hy)) for x, y, hx, hy in specs]


PRESETS = {
    "EnvEmpty2D": lambda: Scene(name="EnvEmpty2D"),
    "EnvSquare2D": lambda: Scene(
        name="EnvSquare2D",
        extra_obstacles=_boxes([(0.0, 0.0, 0.25, 0.25)]),
    ),
    "EnvSimple2D": lambda: Scene(
        name="EnvSimple2D",
        obstacles=_circles([
            (-0.45, 0.35, 0.18), (0.40, 0.45, 0.15), (0.0, -0.05, 0.2),
            (-0.5, -0.5, 0.15), (0.5, -0.45, 0.17),
        ]) + _boxes([(-0.05, 0.65, 0.12, 0.1)]),
        extra_obstacles=_circles([(-0.05, 0.35, 0.1), (0.35, 0.0, 0.1), (-0.3, -0.2, 0.09)]),
    ),
    "EnvNarrowPassageDense2D": lambda: Scene(
        name="EnvNarrowPassageDense2D",
        obstacles=_boxes([(0.0, 0.55, 0.05, 0.45), (0.0, -0.55, 0.05, 0.45)]) + _circles([
            (-0.5, 0.5, 0.12), (-0.55, -0.4, 0.12), (0.5, 0.45, 0.12),
            (0.55, -0.5, 0.12), (-0.3, 0.0, 0.08), (0.3, 0.05, 0.08),
        ]),
        extra_obstacles=_circles([(-0.6, 0.0, 0.1), (0.6, -0.05, 0.1), (0.2, 0.5, 0.1)]),
    ),
    "EnvPlanar2Link": lambda: Scene(
        name="EnvPlanar2Link",
        obstacles=_circles([(0.45, 0.45, 0.12), (-0.5, 0.3, 0.12), (0.3, -0.55, 0.12), (-0.45, -0.45, 0.1)]),
        extra_obstacles=_circles([(0.0, 0.6, 0.08), (0.6, 0.0, 0.08)]),
    ),
    "EnvPlanar4Link": lambda: Scene(
        name="EnvPlanar4Link",
        obstacles=_circles([(0.5, 0.35, 0.1), (-0.45, 0.45, 0.1), (0.1, -0.6, 0.1), (-0.55, -0.3, 0.08)]),
        extra_obstacles=_circles([(0.0, 0.55, 0.07), (0.55, -0.2, 0.07)]),
    ),
}


def preset_scene(name: str) -> Scene:
    if name not in PRESETS:
        raise ConfigError(f"unknown scene preset {name!r}; known presets: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]()


def load_scene(path) -> Scene:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scene file not found: {path}")
    try:
        return Scene.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigError(f"invalid scene file {path}: {e}") from e
