"""2D object shape sets: geometry tests for rasterization and contact."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation


def _point_in_polygon(dx, dz, verts: np.ndarray):
    """Even-odd rule, vectorized over point arrays."""
    inside = np.zeros(np.shape(dx), dtype=bool)
    n = len(verts)
    j = n - 1
    for i in range(n):
        xi, zi = verts[i]
        xj, zj = verts[j]
        crosses = ((zi > dz) != (zj > dz)) & (
            dx < (xj - xi) * (dz - zi) / (zj - zi + 1e-30) + xi
        )
        inside ^= crosses
        j = i
    return inside


@dataclass(frozen=True)
class ShapeDescriptor:
    name: str
    kind: str  # disc | box | triangle | ellipse | capsule | polygon
    params: tuple

    @property
    def bounding_radius(self) -> float:
        if self.kind == "disc":
            return self.params[0]
        if self.kind == "box":
            w, h = self.params
            return 0.5 * float(np.hypot(w, h))
        if self.kind == "ellipse":
            return max(self.params)
        if self.kind == "capsule":
            length, radius = self.params
            return 0.5 * length + radius
        if self.kind in ("triangle", "polygon"):
            verts = np.asarray(self.params)
            return float(np.max(np.hypot(verts[:, 0], verts[:, 1])))
        raise ContractViolation(f"unknown shape kind {self.kind!r}")

    def contains(self, dx, dz):
        """Membership test for offsets (dx, dz) from the shape center."""
        dx = np.asarray(dx)
        dz = np.asarray(dz)
        if self.kind == "disc":
            r = self.params[0]
            return dx * dx + dz * dz <= r * r
        if self.kind == "box":
            w, h = self.params
            return (np.abs(dx) <= 0.5 * w) & (np.abs(dz) <= 0.5 * h)
        if self.kind == "ellipse":
            a, b = self.params
            return (dx / a) ** 2 + (dz / b) ** 2 <= 1.0
        if self.kind == "capsule":
            length, radius = self.params
            cx = np.clip(dx, -0.5 * length, 0.5 * length)
            return (dx - cx) ** 2 + dz * dz <= radius * radius
        if self.kind in ("triangle", "polygon"):
            return _point_in_polygon(dx, dz, np.asarray(self.params))
        raise ContractViolation(f"unknown shape kind {self.kind!r}")


def _regular_polygon(radius: float, n: int, phase: float = 0.0) -> tuple:
    angles = phase + 2.0 * np.pi * np.arange(n) / n
    return tuple((radius * np.cos(a), radius * np.sin(a)) for a in angles)


TRAIN_OBJECTS = (
    ShapeDescriptor("disc_small", "disc", (0.030,)),
    ShapeDescriptor("disc_mid", "disc", (0.040,)),
    ShapeDescriptor("disc_big", "disc", (0.050,)),
    ShapeDescriptor("box_small", "box", (0.050, 0.050)),
    ShapeDescriptor("box_mid", "box", (0.060, 0.060)),
    ShapeDescriptor("box_big", "box", (0.080, 0.080)),
    ShapeDescriptor("rect_wide", "box", (0.080, 0.040)),
    ShapeDescriptor("rect_flat", "box", (0.100, 0.030)),
    ShapeDescriptor("triangle", "triangle", _regular_polygon(0.040, 3, np.pi / 2)),
)

UNSEEN_OBJECTS = (
    ShapeDescriptor("ellipse_a", "ellipse", (0.050, 0.030)),
    ShapeDescriptor("ellipse_b", "ellipse", (0.060, 0.025)),
    ShapeDescriptor("capsule_a", "capsule", (0.080, 0.020)),
    ShapeDescriptor("capsule_b", "capsule", (0.100, 0.025)),
    ShapeDescriptor("rod_thin", "box", (0.100, 0.012)),
    ShapeDescriptor("rod_long", "box", (0.120, 0.010)),
    ShapeDescriptor("pentagon", "polygon", _regular_polygon(0.042, 5)),
    ShapeDescriptor("heptagon", "polygon", _regular_polygon(0.038, 7)),
    ShapeDescriptor(
        "quad_skew",
        "polygon",
        ((-0.045, -0.020), (0.050, -0.035), (0.038, 0.030), (-0.020, 0.042)),
    ),
)

_OBJECT_SETS = {"train": TRAIN_OBJECTS, "unseen": UNSEEN_OBJECTS}


def get_object_set(name: str) -> tuple[ShapeDescriptor, ...]:
    """Named set, or a single-object set for any individual shape name."""
    if name in _OBJECT_SETS:
        return _OBJECT_SETS[name]
    for shapes in _OBJECT_SETS.values():
        for shape in shapes:
            if shape.name == name:
                return (shape,)
    raise ContractViolation(f"unknown object set {name!r}")


def get_object(name: str) -> ShapeDescriptor:
    for shapes in _OBJECT_SETS.values():
        for shape in shapes:
            if shape.name == name:
                return shape
    raise ContractViolation(f"unknown object {name!r}")
