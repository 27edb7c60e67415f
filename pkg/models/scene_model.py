import hashlib
from typing import Annotated, List, Literal, Tuple, Union

from pydantic import BaseModel, Field, field_validator, model_validator


class Circle(BaseModel):
    type: Literal["circle"] = "circle"
    center: Tuple[float, float]
    radius: float = Field(gt=0)

    def aabb(self):
        (x, y), r = self.center, self.radius
        return (x - r, y - r), (x + r, y + r)


class Box(BaseModel):
    type: Literal["box"] = "box"
    center: Tuple[float, float]
    half_extents: Tuple[float, float]

    @field_validator("half_extents")
    @classmethod
    def positive_extents(cls, value):
        if min(value) <= 0:
            raise ValueError("box half extents must be positive")
        return value

    def aabb(self):
        (x, y), (hx, hy) = self.center, self.half_extents
        return (x - hx, y - hy), (x + hx, y + hy)


Primitive = Annotated[Union[Circle, Box], Field(discriminator="type")]


class Scene(BaseModel):
    name: str = "scene"
    bounds: Tuple[Tuple[float, float], Tuple[float, float]] = ((-1.0, -1.0), (1.0, 1.0))
    obstacles: List[Primitive] = []
    extra_obstacles: List[Primitive] = []

    @model_validator(mode="after")
    def primitives_inside_workspace(self):
        (x0, y0), (x1, y1) = self.bounds
        if not (x0 < x1 and y0 < y1):
            raise ValueError("workspace bounds must have positive extent")
        for prim in self.obstacles + self.extra_obstacles:
            (a0, b0), (a1, b1) = prim.aabb()
            if a1 < x0 or a0 > x1 or b1 < y0 or b0 > y1:
                raise ValueError(f"{prim.type} at {prim.center} lies outside the workspace")
        return self

    @property
    def all_obstacles(self) -> list:
        return list(self.obstacles) + list(self.extra_obstacles)

    def training_scene(self) -> "Scene":
        return self.model_copy(update={"extra_obstacles": []})

    def with_extras(self, extras: list) -> "Scene":
        return self.model_copy(update={"extra_obstacles": list(self.extra_obstacles) + list(extras)})

    def scene_hash(self) -> str:
        canonical = self.training_scene().model_dump_json(exclude={"name"})
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
