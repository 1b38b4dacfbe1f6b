"""Apply sampling tensors to images and resize tensors between grid sizes.

Downsampling reads, for every sampling location, the value of the pixel whose
coordinates are closest to it (no blending). Tensor resizing treats each
channel as a scalar field over the unit square with align-corners placement,
which maps output border lines onto the pinned input border lines and so keeps
the covering constraints intact without re-projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ImageBuffer, LabelMap, nearest_pixel_indices
from .solver import SamplingTensor


@dataclass(frozen=True)
class SampledImage:
    """C x h x w values picked up at the locations of source_tensor."""

    values: np.ndarray
    source_tensor: SamplingTensor

    def __post_init__(self):
        v = np.asarray(self.values)
        t = self.source_tensor
        if v.ndim != 3 or v.shape[1:] != (t.grid_h, t.grid_w):
            raise ValueError(f"values shape {v.shape} does not match tensor grid "
                             f"({t.grid_h}, {t.grid_w})")
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_h(self) -> int:
        return self.values.shape[1]

    @property
    def grid_w(self) -> int:
        return self.values.shape[2]


def sample_image(image: ImageBuffer, phi: SamplingTensor) -> SampledImage:
    """Nearest-pixel lookup of the image at every sampling location."""
    rows, cols = nearest_pixel_indices(image.grid, phi.phi)
    return SampledImage(values=image.values[:, rows, cols], source_tensor=phi)


def sample_labels(labels: LabelMap, phi: SamplingTensor) -> np.ndarray:
    """h x w class ids at the sampling locations. Ids are looked up, never
    blended."""
    rows, cols = nearest_pixel_indices(labels.grid, phi.phi)
    return labels.labels[rows, cols]


def resize_tensor(phi: SamplingTensor, new_h: int, new_w: int) -> SamplingTensor:
    """Bilinear align-corners resize of the sampling tensor.

    Output sample (i, j) reads the input field at relative position
    ((i-1)/(new_h-1), (j-1)/(new_w-1)). Border lines land exactly on the
    constant input border lines and interior values are convex combinations,
    so the result is feasible without clamping.
    """
    if new_h < 2 or new_w < 2:
        raise ValueError("target tensor size must be at least 2x2")
    src = phi.phi
    h, w = phi.grid_h, phi.grid_w
    out = _bilinear_axis(src, h, new_h, axis=1)
    out = _bilinear_axis(out, w, new_w, axis=2)
    return SamplingTensor(out)


def _bilinear_axis(field: np.ndarray, n_in: int, n_out: int, axis: int) -> np.ndarray:
    if n_out == n_in:
        return field
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    idx = np.minimum(np.floor(pos).astype(np.int64), n_in - 2)
    frac = pos - idx
    lo = np.take(field, idx, axis=axis)
    hi = np.take(field, idx + 1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return (1.0 - frac) * lo + frac * hi
