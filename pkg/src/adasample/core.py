"""Shared domain types and the relative-coordinate convention.

Pixels of an H x W grid sit on a uniform lattice covering the unit square:
pixel (i, j), 1-based, has relative coordinates ((i-1)/(H-1), (j-1)/(W-1)).
Coordinate 0 indexes rows, coordinate 1 indexes columns; every module in
this package follows that convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class PixelGrid:
    """Pixel lattice geometry. Degenerate 1-pixel rows/columns are rejected
    because the coordinate map divides by H-1 and W-1."""

    height: int
    width: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise ValueError(f"grid must be at least 2x2, got {self.height}x{self.width}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def row_coords(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.height)

    def col_coords(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.width)


def coord_of(grid: PixelGrid, i: int, j: int) -> tuple[float, float]:
    """Relative coordinates of pixel (i, j), 1-based."""
    if not (1 <= i <= grid.height) or not (1 <= j <= grid.width):
        raise IndexError(f"pixel ({i}, {j}) outside {grid.height}x{grid.width} grid")
    return ((i - 1) / (grid.height - 1), (j - 1) / (grid.width - 1))


def nearest_pixel(grid: PixelGrid, u: float, v: float) -> tuple[int, int]:
    """1-based index of the pixel whose coordinates are closest to (u, v).

    Equidistant ties go to the smaller row, then the smaller column, so the
    lookup is deterministic. The distance is Euclidean, which separates per
    axis on a rectangular lattice.
    """
    if math.isnan(u) or math.isnan(v):
        raise ValueError("coordinates must not be NaN")
    i = _nearest_index(np.asarray(u), grid.height)
    j = _nearest_index(np.asarray(v), grid.width)
    return (int(i) + 1, int(j) + 1)


def _nearest_index(coord: np.ndarray, n: int) -> np.ndarray:
    """0-based nearest lattice index along one axis; half-way ties round down."""
    scaled = np.asarray(coord, dtype=np.float64) * (n - 1)
    idx = np.ceil(scaled - 0.5).astype(np.int64)
    return np.clip(idx, 0, n - 1)


def nearest_pixel_indices(grid: PixelGrid, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-pixel lookup: coords is a (2, ...) array of relative
    coordinates; returns 0-based (rows, cols) index arrays with the same
    tie-break as nearest_pixel."""
    coords = np.asarray(coords, dtype=np.float64)
    if np.isnan(coords).any():
        raise ValueError("coordinates must not be NaN")
    rows = _nearest_index(coords[0], grid.height)
    cols = _nearest_index(coords[1], grid.width)
    return rows, cols


@dataclass(frozen=True)
class ImageBuffer:
    """Dense C x H x W image; values are float intensities in arbitrary units."""

    grid: PixelGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[1:] != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.isfinite(v).all():
            raise ValueError("image values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class LabelMap:
    """H x W class-id map. ignore_id marks pixels excluded from metrics and
    boundary extraction."""

    grid: PixelGrid
    labels: np.ndarray
    ignore_id: int | None = None

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.shape != self.grid.shape:
            raise ValueError(f"labels shape {lab.shape} does not match grid {self.grid.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be an integer array")
        if (lab < 0).any():
            raise ValueError("class ids must be non-negative")
        object.__setattr__(self, "labels", lab)

    def valid_mask(self) -> np.ndarray:
        """True where the pixel carries a real class id."""
        if self.ignore_id is None:
            return np.ones(self.grid.shape, dtype=bool)
        return self.labels != self.ignore_id


@dataclass(frozen=True)
class TargetClassSet:
    """The class ids whose boundaries drive adaptation."""

    ids: frozenset[int] = field(default_factory=frozenset)

    def __init__(self, ids):
        object.__setattr__(self, "ids", frozenset(int(i) for i in ids))
        if not self.ids:
            raise ValueError("target class set must not be empty")
        if any(i < 0 for i in self.ids):
            raise ValueError("class ids must be non-negative")

    def check_against(self, labels: LabelMap) -> None:
        if labels.ignore_id is not None and labels.ignore_id in self.ids:
            raise ValueError(f"ignore id {labels.ignore_id} cannot be a target class")

    def __contains__(self, item) -> bool:
        return item in self.ids

    def __iter__(self):
        return iter(sorted(self.ids))

    def mask_of(self, labels: np.ndarray) -> np.ndarray:
        return np.isin(labels, sorted(self.ids))


@dataclass(frozen=True)
class ScoreMap:
    """Per-class scores on an h x w sampling grid (K x h x w).

    Argmax over K is the class decision; ties resolve to the lowest class id.
    """

    grid_h: int
    grid_w: int
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        if s.ndim != 3 or s.shape[1:] != (self.grid_h, self.grid_w):
            raise ValueError(f"scores shape {s.shape} does not match ({self.grid_h}, {self.grid_w})")
        if s.shape[0] < 1:
            raise ValueError("score map needs at least one class")
        if not np.isfinite(s).all():
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)

    @property
    def num_classes(self) -> int:
        return self.scores.shape[0]

    def argmax_labels(self) -> np.ndarray:
        """h x w class decision; np.argmax picks the lowest id on ties."""
        return np.argmax(self.scores, axis=0)
