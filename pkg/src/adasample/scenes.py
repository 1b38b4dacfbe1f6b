"""Deterministic synthetic scenes: colored shapes on a flat background.

Scenes stand in for photographic datasets at desk scale. Generation is a
pure function of the seed: the same spec always yields byte-identical label
maps and images, which the determinism tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ImageBuffer, LabelMap, PixelGrid


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for one synthetic scene.

    Object classes are 1..num_classes, background is 0. Radii are drawn
    log-uniformly so small and large objects are equally common; shapes are
    painted large-first so small objects stay visible on top.
    """

    seed: int
    height: int = 224
    width: int = 224
    objects: tuple = (6, 14)
    radius_range: tuple = (3.0, 40.0)
    num_classes: int = 3
    shapes: tuple = ("disk",)
    noise_sigma: float = 0.02

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError("canvas must be at least 2x2")
        lo, hi = self.objects
        if not (0 <= lo <= hi):
            raise ValueError("invalid object count range")
        rlo, rhi = self.radius_range
        if not (0 < rlo <= rhi):
            raise ValueError("invalid radius range")
        if self.num_classes < 1:
            raise ValueError("need at least one object class")
        if any(s not in ("disk", "polygon") for s in self.shapes) or not self.shapes:
            raise ValueError("shapes must be a non-empty subset of {'disk', 'polygon'}")


def _class_palette(num_classes: int) -> np.ndarray:
    """Background gray plus a fixed hue wheel; independent of the seed."""
    colors = [np.array([0.5, 0.5, 0.5])]
    for c in range(num_classes):
        ang = 2.0 * math.pi * c / num_classes
        colors.append(np.array([0.5 + 0.45 * math.cos(ang + k * 2.0 * math.pi / 3.0)
                                for k in range(3)]))
    return np.stack(colors)


def _paint_disk(labels, yy, xx, cy, cx, r, cls):
    labels[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = cls


def _paint_polygon(labels, yy, xx, cy, cx, r, cls, sides, rot):
    angles = rot + 2.0 * math.pi * np.arange(sides) / sides
    vy = cy + r * np.sin(angles)
    vx = cx + r * np.cos(angles)
    inside = np.ones(labels.shape, dtype=bool)
    for k in range(sides):
        k2 = (k + 1) % sides
        ey, ex = vy[k2] - vy[k], vx[k2] - vx[k]
        inside &= ex * (yy - vy[k]) - ey * (xx - vx[k]) >= 0
    labels[inside] = cls


def generate_scene(spec: SceneSpec) -> tuple:
    """(image, labels) for the spec; every random draw comes from one seeded
    generator, so output bytes depend on nothing else."""
    rng = np.random.default_rng(spec.seed)
    H, W = spec.height, spec.width
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    labels = np.zeros((H, W), dtype=np.int64)

    lo, hi = spec.objects
    count = int(rng.integers(lo, hi + 1))
    objs = []
    for _ in range(count):
        r = float(np.exp(rng.uniform(math.log(spec.radius_range[0]),
                                     math.log(spec.radius_range[1]))))
        cy = float(rng.uniform(0, H - 1))
        cx = float(rng.uniform(0, W - 1))
        cls = int(rng.integers(1, spec.num_classes + 1))
        shape = spec.shapes[int(rng.integers(0, len(spec.shapes)))]
        sides = int(rng.integers(3, 7))
        rot = float(rng.uniform(0, 2.0 * math.pi))
        objs.append((r, cy, cx, cls, shape, sides, rot))

    for r, cy, cx, cls, shape, sides, rot in sorted(objs, key=lambda o: -o[0]):
        if shape == "disk":
            _paint_disk(labels, yy, xx, cy, cx, r, cls)
        else:
            _paint_polygon(labels, yy, xx, cy, cx, r, cls, sides, rot)

    palette = _class_palette(spec.num_classes)
    image = palette[labels].transpose(2, 0, 1).copy()
    if spec.noise_sigma > 0:
        image += spec.noise_sigma * rng.standard_normal(image.shape)
        image = np.clip(image, 0.0, 1.0)

    grid = PixelGrid(H, W)
    return (ImageBuffer(grid=grid, values=image),
            LabelMap(grid=grid, labels=labels))


def disk_label_map(height: int, width: int, radius: float, center=None,
                   class_id: int = 1) -> LabelMap:
    """Single centered disk; the standard shape for localization-error runs."""
    if center is None:
        center = ((height - 1) / 2.0, (width - 1) / 2.0)
    yy, xx = np.meshgrid(np.arange(height, dtype=np.float64),
                         np.arange(width, dtype=np.float64), indexing="ij")
    labels = np.zeros((height, width), dtype=np.int64)
    _paint_disk(labels, yy, xx, center[0], center[1], float(radius), class_id)
    return LabelMap(grid=PixelGrid(height, width), labels=labels)
