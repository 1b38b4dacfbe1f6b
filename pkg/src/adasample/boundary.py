"""Semantic boundary extraction and the nearest-boundary coordinate field.

The boundary rule marks both sides of every label transition that involves a
target class, producing a two-pixel-thick band. The nearest-boundary field
assigns each location of a coarse sampling grid the relative coordinates of
its Euclidean-closest boundary pixel; it is the data term of the sampling
energy downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import LabelMap, PixelGrid, TargetClassSet


@dataclass(frozen=True)
class BoundaryMap:
    grid: PixelGrid
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.shape != self.grid.shape or m.dtype != np.bool_:
            raise ValueError("mask must be a boolean H x W array matching the grid")
        object.__setattr__(self, "mask", m)

    @property
    def num_pixels(self) -> int:
        return int(self.mask.sum())


@dataclass(frozen=True)
class NearestBoundaryField:
    """coords[:, i, j] is the relative coordinate of the boundary pixel closest
    to the (i, j) anchor of a uniform grid_h x grid_w grid over [0,1]^2."""

    grid_h: int
    grid_w: int
    coords: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.shape != (2, self.grid_h, self.grid_w):
            raise ValueError(f"coords shape {c.shape} != (2, {self.grid_h}, {self.grid_w})")
        if not np.isfinite(c).all() or c.min() < 0.0 or c.max() > 1.0:
            raise ValueError("coords must lie in [0, 1]^2")
        object.__setattr__(self, "coords", c)


def extract_boundary(labels: LabelMap, targets: TargetClassSet,
                     all_class_boundaries: bool = False) -> BoundaryMap:
    """Mark pixels adjacent (4-neighborhood) to a differing label.

    A pixel p is boundary iff it has a 4-neighbor q with label(p) != label(q),
    neither label is the ignore id, and at least one of the two labels is a
    target class. Both p and q are marked, so the rule is symmetric in the
    direction the neighbor check is evaluated.

    all_class_boundaries drops the target-membership requirement, for datasets
    where every class is of interest; ignore pixels still never contribute.
    """
    targets.check_against(labels)
    lab = labels.labels
    ignore = labels.ignore_id
    target_mask = targets.mask_of(lab)
    mask = np.zeros(labels.grid.shape, dtype=bool)

    for axis in (0, 1):
        a = lab.take(range(lab.shape[axis] - 1), axis=axis)
        b = lab.take(range(1, lab.shape[axis]), axis=axis)
        hit = a != b
        if ignore is not None:
            hit &= (a != ignore) & (b != ignore)
        if not all_class_boundaries:
            ta = target_mask.take(range(lab.shape[axis] - 1), axis=axis)
            tb = target_mask.take(range(1, lab.shape[axis]), axis=axis)
            hit &= ta | tb
        if axis == 0:
            mask[:-1, :] |= hit
            mask[1:, :] |= hit
        else:
            mask[:, :-1] |= hit
            mask[:, 1:] |= hit
    return BoundaryMap(grid=labels.grid, mask=mask)


def boundary_pixel_coords(bmap: BoundaryMap) -> np.ndarray:
    """(n, 2) relative coordinates of boundary pixels, in (row, col)
    lexicographic order."""
    rows, cols = np.nonzero(bmap.mask)
    h, w = bmap.grid.shape
    return np.stack([rows / (h - 1), cols / (w - 1)], axis=1)


def nearest_boundary_field(bmap: BoundaryMap, grid_h: int, grid_w: int) -> NearestBoundaryField:
    """Closest-boundary-pixel coordinates for every anchor of a uniform
    grid_h x grid_w grid.

    Ties go to the boundary pixel with the smallest row, then column. An empty
    boundary mask falls back to the anchors themselves, which later makes the
    solved sampling grid exactly uniform.
    """
    if grid_h < 2 or grid_w < 2:
        raise ValueError("sampling grid must be at least 2x2")
    uy, ux = np.meshgrid(np.linspace(0.0, 1.0, grid_h), np.linspace(0.0, 1.0, grid_w),
                         indexing="ij")
    anchors = np.stack([uy.ravel(), ux.ravel()], axis=1)

    points = boundary_pixel_coords(bmap)
    if len(points) == 0:
        coords = np.stack([uy, ux])
        return NearestBoundaryField(grid_h=grid_h, grid_w=grid_w, coords=coords)

    tree = cKDTree(points)
    dist, idx = tree.query(anchors)
    # Deterministic tie-break: re-query a vanishingly larger ball and keep the
    # lexicographically smallest point (points are in (row, col) order).
    radii = dist * (1.0 + 1e-12) + 1e-300
    balls = tree.query_ball_point(anchors, radii)
    for k, ball in enumerate(balls):
        if len(ball) > 1:
            idx[k] = min(ball)
    chosen = points[idx]
    coords = chosen.T.reshape(2, grid_h, grid_w).copy()
    return NearestBoundaryField(grid_h=grid_h, grid_w=grid_w, coords=coords)
