"""Orthographic rasterizer for the planar scene and mask-derived labels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import VisionConfig, WorldConfig
from .kinematics import joint_points

ARM_HALF_WIDTH = 0.014  # m, drawn thickness of each link
THROWER_GRAY = 0.25
CATCHER_GRAY = 0.35
BACKGROUND_GRAY = 0.5


@dataclass
class Frame:
    image: np.ndarray  # (H, W, 3) float64 in [0, 1]
    mask: np.ndarray  # (H, W) bool, true exactly on object pixels


def pixel_grid(world: WorldConfig, vision: VisionConfig):
    """World coordinates of pixel centers; row 0 is the top of the frame."""
    x0, x1 = world.frustum_x
    z0, z1 = world.frustum_z
    xs = x0 + (np.arange(vision.width) + 0.5) * (x1 - x0) / vision.width
    zs = z1 - (np.arange(vision.height) + 0.5) * (z1 - z0) / vision.height
    return np.meshgrid(xs, zs)


def _paint_segment(image, px, pz, p1, p2, value):
    d = p2 - p1
    length2 = float(d @ d)
    if length2 < 1e-12:
        t = np.zeros_like(px)
    else:
        t = np.clip(((px - p1[0]) * d[0] + (pz - p1[1]) * d[1]) / length2, 0.0, 1.0)
    cx = p1[0] + t * d[0]
    cz = p1[1] + t * d[1]
    hit = (px - cx) ** 2 + (pz - cz) ** 2 <= ARM_HALF_WIDTH**2
    image[hit] = value


class Renderer:
    """Pure function of (state fields, noise texture); grid precomputed once."""

    def __init__(self, world: WorldConfig, vision: VisionConfig):
        self.world = world
        self.vision = vision
        self.px, self.pz = pixel_grid(world, vision)

    def render(
        self,
        thrower_q,
        catcher_q,
        shape,
        p_obj,
        color,
        background_noise: np.ndarray | None = None,
    ) -> Frame:
        w = self.world
        h, wd = self.vision.height, self.vision.width
        gray = np.full((h, wd), BACKGROUND_GRAY)

        for q, base, value in (
            (thrower_q, w.thrower_base, THROWER_GRAY),
            (catcher_q, w.catcher_base, CATCHER_GRAY),
        ):
            pts = joint_points(np.asarray(q), np.asarray(base), w.link_lengths)
            for p1, p2 in zip(pts[:-1], pts[1:]):
                _paint_segment(gray, self.px, self.pz, p1, p2, value)

        arm_pixels = gray != BACKGROUND_GRAY
        mask = shape.contains(self.px - p_obj[0], self.pz - p_obj[1])

        image = np.repeat(gray[:, :, None], 3, axis=2)
        image[mask] = np.asarray(color, dtype=np.float64)

        if background_noise is not None:
            background = ~(arm_pixels | mask)
            image[background] = np.clip(
                image[background] + background_noise[background], 0.0, 1.0
            )
        return Frame(image=image, mask=mask)


def labels_from_mask(mask: np.ndarray) -> np.ndarray:
    """(area ratio, centroid x, centroid y), centroid normalized to [0,1].

    Empty mask returns the sentinel (0, 0.5, 0.5).
    """
    h, w = mask.shape
    count = int(mask.sum())
    if count == 0:
        return np.array([0.0, 0.5, 0.5])
    rows, cols = np.nonzero(mask)
    delta = count / (h * w)
    return np.array([delta, cols.mean() / w, rows.mean() / h])
