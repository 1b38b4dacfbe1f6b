"""End-to-end runs: boundary-adaptive downsampling against the uniform baseline.

Per image: extract target-class boundaries, build the nearest-boundary field
at the small solver grid, minimize the sampling energy, resize the tensor to
the working resolution, sample, classify with the ground-truth oracle,
rasterize back up, and score. The uniform baseline shares every stage except
the solve (it never touches the solver, keeping cost comparisons honest).
Aggregation pools confusion, band, and object counts before any ratio is
taken. All randomness is derived from (run seed, image index), so reruns are
byte-identical.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .boundary import extract_boundary, nearest_boundary_field
from .core import ImageBuffer, LabelMap, PixelGrid, ScoreMap, TargetClassSet
from .io import (DEFAULT_IGNORE_ID, read_image_png, read_label_png, sha256_of_file,
                 write_csv, write_json, write_label_png, write_tensor)
from .metrics import (confusion_matrix, iou_from_confusion, object_stats,
                      recall_report_from_stats, trimap_counts, trimap_curve_from_counts)
from .resample import resize_tensor, sample_image, sample_labels
from .solver import (EnergyParams, SamplingTensor, SolverConvergenceError,
                     solve_sampling_tensor, uniform_tensor)
from .upsample import build_coverage, upsample_labels

ARMS = ("adaptive", "uniform")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of one run; defaults follow the small-tensor-then-resize scheme."""

    lam: float = 1.0
    tensor_h: int = 8
    tensor_w: int = 8
    out_h: int = 32
    out_w: int = 32
    trimap_widths: tuple = (1, 2, 4, 8, 16, 32)
    recall_bins: int = 4
    oracle: str = "gt"
    seed: int = 0
    center_crop_square: bool = False

    def __post_init__(self):
        if math.isnan(self.lam) or self.lam < 0:
            raise ValueError("lambda must be non-negative")
        for n in (self.tensor_h, self.tensor_w, self.out_h, self.out_w):
            if n < 2:
                raise ValueError("grid sizes must be at least 2")
        if self.recall_bins < 1:
            raise ValueError("need at least one recall bin")
        self.noise_p  # validates the oracle string

    @property
    def noise_p(self) -> float:
        if self.oracle == "gt":
            return 0.0
        if self.oracle.startswith("noisy:"):
            p = float(self.oracle.split(":", 1)[1])
            if not (0.0 <= p <= 1.0):
                raise ValueError("flip probability must be in [0, 1]")
            return p
        raise ValueError(f"unknown oracle mode {self.oracle!r}; use 'gt' or 'noisy:<p>'")


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    pairs: tuple
    class_names: dict
    target_ids: tuple
    ignore_id: int | None = DEFAULT_IGNORE_ID

    @property
    def num_classes(self) -> int:
        return max(self.class_names) + 1


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path) as f:
        doc = json.load(f)
    root = path.parent
    class_names = {int(k): str(v) for k, v in doc["classes"].items()}
    pairs = []
    for img, lab in doc["pairs"]:
        ip, lp = root / img, root / lab
        for p in (ip, lp):
            if not p.is_file():
                raise FileNotFoundError(f"manifest entry missing on disk: {p}")
        pairs.append((ip, lp))
    ignore = doc.get("ignore_id", DEFAULT_IGNORE_ID)
    targets = tuple(int(t) for t in doc["targets"])
    for t in targets:
        if t not in class_names:
            raise ValueError(f"target class {t} not in the class table")
    return DatasetManifest(root=root, pairs=tuple(pairs), class_names=class_names,
                           target_ids=targets,
                           ignore_id=None if ignore is None else int(ignore))


def save_manifest(path, pairs, class_names, target_ids,
                  ignore_id=DEFAULT_IGNORE_ID) -> None:
    """Companion writer for generated datasets; paths are stored relative to
    the manifest location."""
    path = Path(path)
    doc = {
        "classes": {str(k): v for k, v in class_names.items()},
        "targets": list(target_ids),
        "ignore_id": ignore_id,
        "pairs": [[str(i), str(l)] for i, l in pairs],
    }
    write_json(path, doc)


def oracle_classify(labels: LabelMap, phi: SamplingTensor, num_classes: int,
                    rng=None, flip_p: float = 0.0) -> ScoreMap:
    """One-hot scores from ground truth at the sampling locations.

    Ignore-id samples get a flat 1/K vector. With flip_p > 0 each non-ignore
    sample's label is replaced by a uniformly random other class with that
    probability, emulating classifier error.
    """
    valid = labels.valid_mask()
    if valid.any() and int(labels.labels[valid].max()) >= num_classes:
        raise ValueError("num_classes must exceed every class id")
    ids = sample_labels(labels, phi)
    ignored = np.zeros(ids.shape, dtype=bool)
    if labels.ignore_id is not None:
        ignored = ids == labels.ignore_id
    if flip_p > 0.0:
        if rng is None:
            raise ValueError("noisy oracle needs a random generator")
        if num_classes < 2:
            raise ValueError("cannot flip labels with a single class")
        flip = (rng.random(ids.shape) < flip_p) & ~ignored
        other = rng.integers(0, num_classes - 1, size=ids.shape)
        other = other + (other >= ids)
        ids = np.where(flip, other, ids)

    h, w = ids.shape
    scores = np.zeros((num_classes, h, w))
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    safe = np.where(ignored, 0, ids)
    scores[safe, ii, jj] = 1.0
    scores[:, ignored] = 1.0 / num_classes
    return ScoreMap(scores=scores, grid_h=h, grid_w=w)


def center_crop_square(labels_or_image):
    """Central largest square of a LabelMap or ImageBuffer."""
    obj = labels_or_image
    H, W = obj.grid.shape
    size = min(H, W)
    top, left = (H - size) // 2, (W - size) // 2
    grid = PixelGrid(size, size)
    if isinstance(obj, LabelMap):
        return LabelMap(grid=grid, labels=obj.labels[top:top + size, left:left + size],
                        ignore_id=obj.ignore_id)
    return ImageBuffer(grid=grid, values=obj.values[:, top:top + size, left:left + size])


def process_image_pair(image, labels: LabelMap, targets: TargetClassSet,
                       config: PipelineConfig, num_classes: int, rng) -> dict:
    """Both pipeline arms on one image; returns per-arm counts and artifacts.

    The noisy oracle consumes the generator in a fixed arm order (adaptive
    first), part of the determinism contract.
    """
    targets.check_against(labels)
    timings = {}
    t0 = time.perf_counter()
    bmap = extract_boundary(labels, targets)
    bfield = nearest_boundary_field(bmap, config.tensor_h, config.tensor_w)
    timings["boundary_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    solved = solve_sampling_tensor(bfield, EnergyParams(lam=config.lam))
    timings["solve_s"] = time.perf_counter() - t0

    tensors = {
        "adaptive": resize_tensor(solved, config.out_h, config.out_w),
        "uniform": uniform_tensor(config.out_h, config.out_w),
    }
    result = {"solved_tensor": solved, "arms": {}, "timings": timings}
    for arm in ARMS:
        phi = tensors[arm]
        scores = oracle_classify(labels, phi, num_classes, rng, config.noise_p)
        t0 = time.perf_counter()
        cov = build_coverage(phi, labels.grid)
        timings[f"raster_{arm}_s"] = time.perf_counter() - t0
        pred = upsample_labels(scores, cov)
        result["arms"][arm] = {
            "tensor": phi,
            "pred": pred,
            "confusion": confusion_matrix(pred, labels, num_classes),
            "trimap": trimap_counts(pred, labels, targets, config.trimap_widths),
            "objects": object_stats(pred, labels, targets),
            "raster_stats": {"candidates": cov.num_candidates,
                             "fallback": cov.num_fallback,
                             "inverted": cov.num_inverted},
        }
        if image is not None:
            result["arms"][arm]["sampled"] = sample_image(image, phi)
    return result


@dataclass
class RunReport:
    num_images: int
    failures: list
    iou: dict
    trimap: dict
    recall: dict
    per_image: list = field(default_factory=list)


def _aggregate(outcomes, targets: TargetClassSet, config: PipelineConfig,
               num_classes: int) -> RunReport:
    conf = {arm: np.zeros((num_classes, num_classes), dtype=np.int64) for arm in ARMS}
    tri_c = {arm: np.zeros(len(config.trimap_widths), dtype=np.int64) for arm in ARMS}
    tri_t = {arm: np.zeros(len(config.trimap_widths), dtype=np.int64) for arm in ARMS}
    objects = {arm: [] for arm in ARMS}
    per_image = []
    for idx, out in outcomes:
        row = {"index": idx}
        for arm in ARMS:
            a = out["arms"][arm]
            conf[arm] += a["confusion"]
            c, t = a["trimap"]
            tri_c[arm] += c
            tri_t[arm] += t
            objects[arm].extend(a["objects"])
            rep = iou_from_confusion(a["confusion"], targets)
            row[f"{arm}_miou_target"] = rep.mean_target
            row[f"{arm}_miou_all"] = rep.mean_all
            for k, v in a["raster_stats"].items():
                row[f"{arm}_{k}"] = v
        per_image.append(row)

    iou = {arm: iou_from_confusion(conf[arm], targets) for arm in ARMS}
    trimap = {arm: trimap_curve_from_counts(config.trimap_widths, tri_c[arm], tri_t[arm])
              for arm in ARMS}
    recall = {arm: recall_report_from_stats(objects[arm], config.recall_bins)
              for arm in ARMS}
    if recall["uniform"].bins == recall["adaptive"].bins and recall["uniform"].bins:
        recall["adaptive"] = recall["adaptive"].relative_to(recall["uniform"])
    return RunReport(num_images=len(outcomes), failures=[], iou=iou, trimap=trimap,
                     recall=recall, per_image=per_image)


def run_pipeline(manifest: DatasetManifest, config: PipelineConfig,
                 out_dir=None, workers: int = 1) -> RunReport:
    """All manifest images through both arms, pooled into one report.

    Decode failures and solver non-convergence are recorded per image and do
    not abort the run. With out_dir set, tensors, predictions, and CSV
    reports are written; everything except timings.csv is covered by hashes
    in run_manifest.json.
    """
    targets = TargetClassSet(manifest.target_ids)
    num_classes = manifest.num_classes

    def job(idx_pair):
        idx, (img_path, lab_path) = idx_pair
        try:
            image = read_image_png(img_path)
            labels = read_label_png(lab_path, manifest.ignore_id)
            if config.center_crop_square:
                image = center_crop_square(image)
                labels = center_crop_square(labels)
            rng = np.random.default_rng([config.seed, idx])
            return idx, process_image_pair(image, labels, targets, config,
                                           num_classes, rng), None
        except (OSError, ValueError, SolverConvergenceError) as exc:
            return idx, None, f"{type(exc).__name__}: {exc}"

    jobs = list(enumerate(manifest.pairs))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]

    outcomes = [(idx, out) for idx, out, err in results if err is None]
    failures = [{"index": idx, "image": str(manifest.pairs[idx][0]), "error": err}
                for idx, _, err in results if err is not None]
    report = _aggregate(outcomes, targets, config, num_classes)
    report.failures = failures
    for row, (idx, _) in zip(report.per_image, outcomes):
        row["image"] = str(manifest.pairs[idx][0])

    if out_dir is not None:
        _emit(Path(out_dir), report, outcomes, config)
    return report


def _report_rows(report: RunReport):
    iou_rows, trimap_rows, recall_rows = [], [], []
    for arm in ARMS:
        rep = report.iou[arm]
        for c in sorted(rep.per_class):
            iou_rows.append({"arm": arm, "class": c, "iou": repr(rep.per_class[c])})
        iou_rows.append({"arm": arm, "class": "mean_all", "iou": repr(rep.mean_all)})
        iou_rows.append({"arm": arm, "class": "mean_target", "iou": repr(rep.mean_target)})
        curve = report.trimap[arm]
        for wdt, acc in zip(curve.widths, curve.accuracy):
            trimap_rows.append({"arm": arm, "width": wdt, "accuracy": repr(acc)})
        rec = report.recall[arm]
        for b in range(rec.bins):
            recall_rows.append({
                "arm": arm, "bin": b,
                "mean_area": repr(rec.bin_mean_area[b]),
                "recall": repr(rec.per_bin[b]),
                "relative": repr(rec.relative[b]) if rec.relative else "",
            })
    return iou_rows, trimap_rows, recall_rows


def _emit(out_dir: Path, report: RunReport, outcomes, config: PipelineConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "tensors").mkdir(exist_ok=True)
    (out_dir / "preds").mkdir(exist_ok=True)
    artifacts = []

    timing_rows = []
    for idx, out in outcomes:
        tpath = out_dir / "tensors" / f"solved_{idx:04d}.smpt"
        write_tensor(tpath, out["solved_tensor"])
        artifacts.append(tpath)
        for arm in ARMS:
            ppath = out_dir / "preds" / f"{arm}_{idx:04d}.png"
            write_label_png(ppath, out["arms"][arm]["pred"])
            artifacts.append(ppath)
        timing_rows.append({"index": idx, **{k: repr(v) for k, v in out["timings"].items()}})

    iou_rows, trimap_rows, recall_rows = _report_rows(report)
    for name, rows, fields in (
        ("iou.csv", iou_rows, ["arm", "class", "iou"]),
        ("trimap.csv", trimap_rows, ["arm", "width", "accuracy"]),
        ("recall.csv", recall_rows, ["arm", "bin", "mean_area", "recall", "relative"]),
    ):
        write_csv(out_dir / name, rows, fields)
        artifacts.append(out_dir / name)
    if report.per_image:
        fields = sorted({k for row in report.per_image for k in row},
                        key=lambda k: (k != "index", k))
        rows = [{k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()}
                for row in report.per_image]
        write_csv(out_dir / "per_image.csv", rows, fields)
        artifacts.append(out_dir / "per_image.csv")
    if timing_rows:
        # Deliberately absent from the hash list: wall times differ per run.
        write_csv(out_dir / "timings.csv", timing_rows)

    manifest = {
        "config": {
            "lambda": config.lam, "tensor_size": [config.tensor_h, config.tensor_w],
            "resolution": [config.out_h, config.out_w],
            "trimap_widths": list(config.trimap_widths),
            "recall_bins": config.recall_bins, "oracle": config.oracle,
            "seed": config.seed, "center_crop_square": config.center_crop_square,
        },
        "num_images": report.num_images,
        "failures": report.failures,
        "hashes": {str(p.relative_to(out_dir)): sha256_of_file(p)
                   for p in sorted(artifacts)},
    }
    write_json(out_dir / "run_manifest.json", manifest)
