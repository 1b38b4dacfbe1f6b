"""File formats: SMPT sampling tensors, PNG images and label maps, CSV reports.

SMPT layout: magic "SMPT", version u16 little-endian, grid height u32, grid
width u32, then 2*h*w float64 little-endian values in channel-major,
row-major order. Label maps are single-channel 8-bit PNGs whose pixel value
is the class id; 255 is the conventional ignore id.
"""

from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .core import ImageBuffer, LabelMap, PixelGrid
from .solver import SamplingTensor

SMPT_MAGIC = b"SMPT"
SMPT_VERSION = 1
_HEADER = struct.Struct("<HII")
DEFAULT_IGNORE_ID = 255


def write_tensor(path, phi: SamplingTensor) -> None:
    payload = np.ascontiguousarray(phi.phi, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(SMPT_MAGIC)
        f.write(_HEADER.pack(SMPT_VERSION, phi.grid_h, phi.grid_w))
        f.write(payload)


def read_tensor(path) -> SamplingTensor:
    data = Path(path).read_bytes()
    if len(data) < 4 + _HEADER.size or data[:4] != SMPT_MAGIC:
        raise ValueError(f"{path}: not an SMPT tensor file")
    version, h, w = _HEADER.unpack_from(data, 4)
    if version != SMPT_VERSION:
        raise ValueError(f"{path}: unsupported SMPT version {version}")
    expected = 4 + _HEADER.size + 2 * h * w * 8
    if len(data) != expected:
        raise ValueError(f"{path}: truncated SMPT file ({len(data)} of {expected} bytes)")
    arr = np.frombuffer(data, dtype="<f8", offset=4 + _HEADER.size)
    return SamplingTensor(arr.reshape(2, h, w).astype(np.float64))


def write_label_png(path, labels: LabelMap) -> None:
    arr = labels.labels
    if arr.max() > 255:
        raise ValueError("class ids above 255 do not fit an 8-bit label PNG")
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path, format="PNG")


def read_label_png(path, ignore_id: int | None = DEFAULT_IGNORE_ID) -> LabelMap:
    with Image.open(path) as img:
        # Palette images hold the class id in the index; do not convert,
        # conversion would replace indices with colors.
        if img.mode not in ("L", "P"):
            raise ValueError(f"{path}: label PNG must be single-channel, got mode {img.mode}")
        arr = np.asarray(img, dtype=np.int64)
    if ignore_id is not None and not (arr == ignore_id).any():
        ignore_id = None
    return LabelMap(grid=PixelGrid(*arr.shape), labels=arr, ignore_id=ignore_id)


def write_image_png(path, image: ImageBuffer) -> None:
    arr = np.clip(image.values, 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8)
    if image.channels == 1:
        Image.fromarray(arr[0], mode="L").save(path, format="PNG")
    elif image.channels == 3:
        Image.fromarray(arr.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")
    else:
        raise ValueError(f"cannot encode {image.channels}-channel image as PNG")


def read_image_png(path) -> ImageBuffer:
    with Image.open(path) as img:
        if img.mode == "P":
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = arr.transpose(2, 0, 1)
    return ImageBuffer(grid=PixelGrid(*arr.shape[1:]), values=arr)


def write_csv(path, rows, fieldnames=None) -> None:
    """Rows of dicts to CSV with a header; field order follows the first row
    unless given."""
    rows = list(rows)
    if fieldnames is None:
        if not rows:
            raise ValueError("cannot infer CSV columns from zero rows")
        fieldnames = list(rows[0].keys())
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def sha256_of_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
