"""Segmentation quality metrics at original resolution.

All metrics exclude ignore-id pixels of the ground truth. IoU is computed
from pooled confusion counts (never by averaging per-image ratios), the
boundary-band curve uses square (Chebyshev) bands around ground-truth
boundaries, and object recall groups 4-connected components into
equal-population area bins.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .boundary import extract_boundary
from .core import LabelMap, TargetClassSet


@dataclass(frozen=True)
class IoUReport:
    """Per-class intersection-over-union plus means.

    Classes whose union is zero (absent from both maps) carry no entry and do
    not contribute to either mean.
    """

    per_class: dict
    mean_all: float
    mean_target: float


@dataclass(frozen=True)
class TrimapCurve:
    """Accuracy restricted to bands of growing half-width around boundaries.

    An empty band (no boundary pixels, or width too small to catch any valid
    pixel) yields NaN, never 0.
    """

    widths: tuple
    accuracy: tuple


@dataclass(frozen=True)
class ObjectRecallReport:
    bins: int
    per_bin: tuple
    bin_mean_area: tuple
    object_count: int
    per_class_per_bin: dict = field(default_factory=dict)
    relative: tuple | None = None

    def relative_to(self, baseline: "ObjectRecallReport") -> "ObjectRecallReport":
        """Same report with per-bin recall divided by the baseline's."""
        if baseline.bins != self.bins:
            raise ValueError(f"bin counts differ: {self.bins} vs {baseline.bins}")
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.asarray(self.per_bin) / np.asarray(baseline.per_bin)
        return ObjectRecallReport(bins=self.bins, per_bin=self.per_bin,
                                  bin_mean_area=self.bin_mean_area,
                                  object_count=self.object_count,
                                  per_class_per_bin=self.per_class_per_bin,
                                  relative=tuple(rel))


def _check_same_grid(pred: LabelMap, gt: LabelMap) -> None:
    if pred.grid.shape != gt.grid.shape:
        raise ValueError(f"prediction grid {pred.grid.shape} != truth grid {gt.grid.shape}")


def confusion_matrix(pred: LabelMap, gt: LabelMap, num_classes: int) -> np.ndarray:
    """num_classes x num_classes counts, rows = truth, cols = prediction."""
    _check_same_grid(pred, gt)
    valid = gt.valid_mask()
    t = gt.labels[valid].astype(np.int64)
    p = pred.labels[valid].astype(np.int64)
    if len(t) and (t.max() >= num_classes or p.max() >= num_classes):
        raise ValueError("class id exceeds num_classes")
    counts = np.bincount(t * num_classes + p, minlength=num_classes * num_classes)
    return counts.reshape(num_classes, num_classes)


def iou_from_confusion(conf: np.ndarray, targets: TargetClassSet) -> IoUReport:
    conf = np.asarray(conf, dtype=np.int64)
    tp = np.diag(conf).astype(np.float64)
    union = conf.sum(axis=0) + conf.sum(axis=1) - np.diag(conf)
    present = union > 0
    per_class = {}
    for c in np.nonzero(present)[0]:
        per_class[int(c)] = float(tp[c] / union[c])
    vals = [per_class[c] for c in sorted(per_class)]
    mean_all = float(np.mean(vals)) if vals else float("nan")
    tvals = [per_class[c] for c in sorted(per_class) if c in targets]
    mean_target = float(np.mean(tvals)) if tvals else float("nan")
    return IoUReport(per_class=per_class, mean_all=mean_all, mean_target=mean_target)


def iou(pred: LabelMap, gt: LabelMap, targets: TargetClassSet) -> IoUReport:
    _check_same_grid(pred, gt)
    valid = gt.valid_mask()
    top = 0
    if valid.any():
        top = max(int(gt.labels[valid].max()), int(pred.labels[valid].max()))
    num_classes = max(top, max(targets)) + 1
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes), targets)


def pixel_accuracy(pred: LabelMap, gt: LabelMap) -> float:
    """Fraction of valid pixels classified correctly; NaN if nothing is valid."""
    _check_same_grid(pred, gt)
    valid = gt.valid_mask()
    total = int(valid.sum())
    if total == 0:
        return float("nan")
    return float((pred.labels[valid] == gt.labels[valid]).sum() / total)


def boundary_chebyshev_distance(gt: LabelMap, targets: TargetClassSet) -> np.ndarray:
    """Per-pixel Chebyshev distance to the nearest ground-truth boundary pixel.

    Returns -1 everywhere when the map has no boundary at all.
    """
    bmask = extract_boundary(gt, targets).mask
    if not bmask.any():
        return np.full(gt.grid.shape, -1, dtype=np.int64)
    dist = ndimage.distance_transform_cdt(~bmask, metric="chessboard")
    return dist.astype(np.int64)


def trimap_counts(pred: LabelMap, gt: LabelMap, targets: TargetClassSet, widths):
    """(correct, total) pixel counts per band width; pool these across images
    before taking ratios."""
    widths = [int(k) for k in widths]
    if any(k <= 0 for k in widths):
        raise ValueError("band widths must be positive")
    _check_same_grid(pred, gt)
    dist = boundary_chebyshev_distance(gt, targets)
    valid = gt.valid_mask()
    correct = pred.labels == gt.labels
    n_correct = np.zeros(len(widths), dtype=np.int64)
    n_total = np.zeros(len(widths), dtype=np.int64)
    for i, k in enumerate(widths):
        band = valid & (dist >= 0) & (dist <= k)
        n_total[i] = band.sum()
        n_correct[i] = correct[band].sum()
    return n_correct, n_total


def trimap_curve_from_counts(widths, n_correct, n_total) -> TrimapCurve:
    accs = [float(c / t) if t else float("nan") for c, t in zip(n_correct, n_total)]
    return TrimapCurve(widths=tuple(int(k) for k in widths), accuracy=tuple(accs))


def trimap_accuracy(pred: LabelMap, gt: LabelMap, targets: TargetClassSet,
                    widths) -> TrimapCurve:
    n_correct, n_total = trimap_counts(pred, gt, targets, widths)
    return trimap_curve_from_counts(widths, n_correct, n_total)


def _components(gt: LabelMap, targets: TargetClassSet):
    """(class id, pixel mask, area) per 4-connected same-class region."""
    valid = gt.valid_mask()
    out = []
    for c in targets:
        lab, n = ndimage.label((gt.labels == c) & valid)
        for k in range(1, n + 1):
            m = lab == k
            out.append((c, m, int(m.sum())))
    return out


def object_stats(pred: LabelMap, gt: LabelMap, targets: TargetClassSet):
    """(class id, area, recall) per ground-truth object; the raw rows that
    recall reports bin, exposed so multi-image runs can pool objects first."""
    _check_same_grid(pred, gt)
    return [(c, a, float((pred.labels[m] == c).sum() / a))
            for c, m, a in _components(gt, targets)]


def recall_report_from_stats(stats, num_bins: int) -> ObjectRecallReport:
    if num_bins < 1:
        raise ValueError("need at least one bin")
    if len(stats) == 0:
        warnings.warn("no target objects in the ground truth; recall report is empty",
                      RuntimeWarning, stacklevel=2)
        return ObjectRecallReport(bins=0, per_bin=(), bin_mean_area=(), object_count=0)
    if len(stats) < num_bins:
        warnings.warn(f"only {len(stats)} objects for {num_bins} bins; "
                      f"using {len(stats)} bins", RuntimeWarning, stacklevel=2)
        num_bins = len(stats)

    classes = np.array([c for c, _, _ in stats])
    areas = np.array([a for _, a, _ in stats], dtype=np.float64)
    recalls = np.array([r for _, _, r in stats])
    order = np.argsort(areas, kind="stable")
    groups = np.array_split(order, num_bins)

    per_bin = tuple(float(recalls[g].mean()) for g in groups)
    bin_mean_area = tuple(float(areas[g].mean()) for g in groups)
    per_class_per_bin = {}
    for c in sorted(set(int(c) for c in classes)):
        row = []
        for g in groups:
            sel = g[classes[g] == c]
            row.append(float(recalls[sel].mean()) if len(sel) else float("nan"))
        per_class_per_bin[c] = tuple(row)
    return ObjectRecallReport(bins=num_bins, per_bin=per_bin,
                              bin_mean_area=bin_mean_area, object_count=len(stats),
                              per_class_per_bin=per_class_per_bin)


def object_recall(pred: LabelMap, gt: LabelMap, targets: TargetClassSet,
                  num_bins: int) -> ObjectRecallReport:
    return recall_report_from_stats(object_stats(pred, gt, targets), num_bins)
