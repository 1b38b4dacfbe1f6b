"""Command-line entry points for the sampling pipeline and its pieces."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .boundary import extract_boundary, nearest_boundary_field
from .core import ImageBuffer, PixelGrid, ScoreMap, TargetClassSet
from .curves import (bound_experiment, circle_curve, ellipse_curve, line_curve,
                     uniform_grid_boundary_error)
from .io import (read_image_png, read_label_png, read_tensor, write_csv,
                 write_image_png, write_label_png, write_tensor)
from .pipeline import PipelineConfig, load_manifest, run_pipeline, save_manifest
from .resample import resize_tensor, sample_image
from .scenes import SceneSpec, disk_label_map, generate_scene
from .solver import EnergyParams, energy, solve_sampling_tensor
from .upsample import build_coverage, upsample_labels


def _ids(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _parse_curve(text: str):
    kind, _, rest = text.partition(":")
    if kind == "circle":
        return circle_curve(float(rest) if rest else 1.0)
    if kind == "line":
        vals = [float(v) for v in rest.split(",")] if rest else [0.0, 0.0, 1.0, 0.0]
        if len(vals) != 4:
            raise argparse.ArgumentTypeError("line takes x0,y0,x1,y1")
        return line_curve(vals[:2], vals[2:])
    if kind == "ellipse":
        a, b = (float(v) for v in rest.split(","))
        return ellipse_curve(a, b)
    raise argparse.ArgumentTypeError(f"unknown curve {text!r}")


def _cmd_solve_tensor(args) -> int:
    labels = read_label_png(args.labels, args.ignore_id)
    targets = TargetClassSet(args.targets)
    bmap = extract_boundary(labels, targets)
    bfield = nearest_boundary_field(bmap, args.tensor_size[0], args.tensor_size[1])
    params = EnergyParams(lam=args.lam)
    phi = solve_sampling_tensor(bfield, params)
    write_tensor(args.out, phi)
    print(f"solved {phi.grid_h}x{phi.grid_w} tensor from {bmap.num_pixels} boundary "
          f"pixels, lambda={args.lam:g}, energy={energy(phi, bfield, params):.6g}")
    print(f"wrote {args.out}")
    return 0


def _cmd_downsample(args) -> int:
    image = read_image_png(args.image)
    phi = read_tensor(args.tensor)
    if args.resolution is not None:
        phi = resize_tensor(phi, args.resolution[0], args.resolution[1])
    sampled = sample_image(image, phi)
    out_img = ImageBuffer(grid=PixelGrid(sampled.grid_h, sampled.grid_w),
                          values=sampled.values)
    write_image_png(args.out, out_img)
    print(f"sampled {image.grid.shape} -> {out_img.grid.shape}, wrote {args.out}")
    return 0


def _cmd_upsample(args) -> int:
    phi = read_tensor(args.tensor)
    sparse = read_label_png(args.samples, ignore_id=None)
    if sparse.grid.shape != (phi.grid_h, phi.grid_w):
        print(f"error: samples are {sparse.grid.shape}, tensor grid is "
              f"{(phi.grid_h, phi.grid_w)}", file=sys.stderr)
        return 1
    num_classes = args.num_classes or int(sparse.labels.max()) + 1
    # One-hot scores straight from the sparse labels.
    h, w = sparse.grid.shape
    arr = np.zeros((num_classes, h, w))
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    arr[sparse.labels, ii, jj] = 1.0
    cov = build_coverage(phi, PixelGrid(args.resolution[0], args.resolution[1]))
    pred = upsample_labels(ScoreMap(scores=arr, grid_h=h, grid_w=w), cov)
    write_label_png(args.out, pred)
    print(f"interpolated {h}x{w} samples -> {pred.grid.shape}, "
          f"{cov.num_fallback} fallback pixels, wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    from .metrics import iou

    pred = read_label_png(args.pred, ignore_id=None)
    gt = read_label_png(args.gt, args.ignore_id)
    rep = iou(pred, gt, TargetClassSet(args.targets))
    for c in sorted(rep.per_class):
        print(f"class {c}: IoU {rep.per_class[c]:.4f}")
    print(f"mIoU all: {rep.mean_all:.4f}")
    print(f"mIoU target: {rep.mean_target:.4f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        rows = [{"class": c, "iou": repr(v)} for c, v in sorted(rep.per_class.items())]
        rows.append({"class": "mean_all", "iou": repr(rep.mean_all)})
        rows.append({"class": "mean_target", "iou": repr(rep.mean_target)})
        write_csv(Path(args.out) / "iou.csv", rows)
    return 0


def _cmd_trimap(args) -> int:
    from .metrics import trimap_accuracy

    pred = read_label_png(args.pred, ignore_id=None)
    gt = read_label_png(args.gt, args.ignore_id)
    curve = trimap_accuracy(pred, gt, TargetClassSet(args.targets), args.widths)
    for wdt, acc in zip(curve.widths, curve.accuracy):
        print(f"width {wdt:4d}: accuracy {acc:.4f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(args.out) / "trimap.csv",
                  [{"width": wdt, "accuracy": repr(a)}
                   for wdt, a in zip(curve.widths, curve.accuracy)])
    return 0


def _cmd_object_recall(args) -> int:
    from .metrics import object_recall

    pred = read_label_png(args.pred, ignore_id=None)
    gt = read_label_png(args.gt, args.ignore_id)
    rep = object_recall(pred, gt, TargetClassSet(args.targets), args.bins)
    print(f"{rep.object_count} objects in {rep.bins} bins")
    for b in range(rep.bins):
        print(f"bin {b}: mean area {rep.bin_mean_area[b]:8.1f}  "
              f"recall {rep.per_bin[b]:.4f}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(args.out) / "recall.csv",
                  [{"bin": b, "mean_area": repr(rep.bin_mean_area[b]),
                    "recall": repr(rep.per_bin[b])} for b in range(rep.bins)])
    return 0


def _cmd_bound_experiment(args) -> int:
    if args.mode == "chord":
        rows = bound_experiment(args.curve, args.segments)
        print(f"{'M':>6} {'N':>6} {'epsilon':>14} {'bound':>14} {'eps*M^2':>12}")
        for r in rows:
            print(f"{r['M']:>6} {r['N']:>6} {r['epsilon']:>14.6e} "
                  f"{r['bound_cosine']:>14.6e} {r['eps_times_M2']:>12.6f}")
        out_rows = [{k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                    for r in rows]
    else:
        radius = args.radius if args.radius is not None else args.size / 4.0
        shape = disk_label_map(args.size, args.size, radius)
        rows, slope = uniform_grid_boundary_error(shape, args.N, TargetClassSet((1,)),
                                                  include_adaptive=args.adaptive)
        for r in rows:
            extra = f"  adaptive {r['adaptive_error']:8.3f}" if args.adaptive else ""
            print(f"N {r['N']:>6} (n={r['n']:3d}): uniform {r['uniform_error']:8.3f}{extra}")
        print(f"log-log slope: {slope:.3f}")
        out_rows = [{k: repr(v) if isinstance(v, float) else v for k, v in r.items()}
                    for r in rows]
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_csv(Path(args.out) / f"bound_{args.mode}.csv", out_rows)
        print(f"wrote {Path(args.out) / f'bound_{args.mode}.csv'}")
    return 0


def _cmd_gen_scenes(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = []
    for i in range(args.count):
        spec = SceneSpec(seed=[args.seed, i], height=args.size[0], width=args.size[1],
                         objects=tuple(args.objects), radius_range=tuple(args.radius_range),
                         num_classes=args.classes, shapes=tuple(args.shapes),
                         noise_sigma=args.noise)
        image, labels = generate_scene(spec)
        ipath, lpath = f"img_{i:04d}.png", f"lab_{i:04d}.png"
        write_image_png(out / ipath, image)
        write_label_png(out / lpath, labels)
        pairs.append((ipath, lpath))
    class_names = {0: "background"}
    class_names.update({c: f"class_{c}" for c in range(1, args.classes + 1)})
    save_manifest(out / "manifest.json", pairs, class_names,
                  target_ids=list(range(1, args.classes + 1)), ignore_id=None)
    print(f"wrote {args.count} scenes and manifest.json to {out}")
    return 0


def _cmd_pipeline(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.targets is not None:
        manifest = dataclasses.replace(manifest, target_ids=args.targets)
    config = PipelineConfig(lam=args.lam, tensor_h=args.tensor_size[0],
                            tensor_w=args.tensor_size[1], out_h=args.resolution[0],
                            out_w=args.resolution[1],
                            trimap_widths=tuple(args.trimap_widths),
                            recall_bins=args.bins, oracle=args.oracle, seed=args.seed,
                            center_crop_square=args.center_crop_square)
    report = run_pipeline(manifest, config, out_dir=args.out, workers=args.workers)
    print(f"processed {report.num_images} images, {len(report.failures)} failures")
    for arm in ("adaptive", "uniform"):
        rep = report.iou[arm]
        print(f"{arm:>8}: mIoU all {rep.mean_all:.4f}  target {rep.mean_target:.4f}")
    rec = report.recall["adaptive"]
    if rec.relative:
        rel = "  ".join(f"bin{b}:{r:.3f}" for b, r in enumerate(rec.relative))
        print(f"recall vs uniform: {rel}")
    if args.out:
        print(f"reports written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adasample",
        description="Boundary-adaptive image downsampling: solve sampling tensors, "
                    "resample, interpolate back, and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=func)
        return p

    p = add("solve-tensor", _cmd_solve_tensor, "fit a sampling tensor to label boundaries")
    p.add_argument("--labels", required=True)
    p.add_argument("--targets", type=_ids, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--tensor-size", type=int, nargs=2, default=[8, 8], metavar=("H", "W"))
    p.add_argument("--ignore-id", type=int, default=255)
    p.add_argument("--out", required=True)

    p = add("downsample", _cmd_downsample, "apply a sampling tensor to an image")
    p.add_argument("--image", required=True)
    p.add_argument("--tensor", required=True)
    p.add_argument("--resolution", type=int, nargs=2, default=None, metavar=("H", "W"))
    p.add_argument("--out", required=True)

    p = add("upsample", _cmd_upsample, "interpolate sparse labels to full resolution")
    p.add_argument("--tensor", required=True)
    p.add_argument("--samples", required=True, help="label PNG at the tensor grid size")
    p.add_argument("--resolution", type=int, nargs=2, required=True, metavar=("H", "W"))
    p.add_argument("--num-classes", type=int, default=None)
    p.add_argument("--out", required=True)

    for name, func, help_ in (
            ("evaluate", _cmd_evaluate, "IoU between prediction and ground truth"),
            ("trimap", _cmd_trimap, "accuracy in bands around boundaries"),
            ("object-recall", _cmd_object_recall, "per-object recall in area bins")):
        p = add(name, func, help_)
        p.add_argument("--pred", required=True)
        p.add_argument("--gt", required=True)
        p.add_argument("--targets", type=_ids, required=True)
        p.add_argument("--ignore-id", type=int, default=255)
        p.add_argument("--out", default=None)
        if name == "trimap":
            p.add_argument("--widths", type=_ids, default=(1, 2, 4, 8, 16, 32))
        if name == "object-recall":
            p.add_argument("--bins", type=int, default=4)

    p = add("bound-experiment", _cmd_bound_experiment,
            "approximation error and localization-error rate experiments")
    p.add_argument("--mode", choices=("chord", "localization"), default="chord")
    p.add_argument("--curve", type=_parse_curve, default="circle:1.0",
                   help="circle:r | line:x0,y0,x1,y1 | ellipse:a,b")
    p.add_argument("--segments", type=_ids, default=(4, 8, 16, 32, 64, 128, 256, 512))
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--N", type=_ids, default=(64, 256, 1024, 4096))
    p.add_argument("--adaptive", action="store_true")
    p.add_argument("--out", default=None)

    p = add("gen-scenes", _cmd_gen_scenes, "write a synthetic dataset with manifest")
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, nargs=2, default=[224, 224], metavar=("H", "W"))
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--objects", type=int, nargs=2, default=[6, 14], metavar=("LO", "HI"))
    p.add_argument("--radius-range", type=float, nargs=2, default=[3.0, 40.0],
                   metavar=("LO", "HI"))
    p.add_argument("--shapes", type=lambda s: s.split(","), default=["disk"])
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--out", required=True)

    p = add("pipeline", _cmd_pipeline, "run both sampling arms over a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--tensor-size", type=int, nargs=2, default=[8, 8], metavar=("H", "W"))
    p.add_argument("--resolution", type=int, nargs=2, default=[32, 32], metavar=("H", "W"))
    p.add_argument("--targets", type=_ids, default=None,
                   help="override the manifest's target classes")
    p.add_argument("--oracle", default="gt", help="gt | noisy:<p>")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trimap-widths", type=_ids, default=(1, 2, 4, 8, 16, 32))
    p.add_argument("--bins", type=int, default=4)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--center-crop-square", action="store_true")
    p.add_argument("--out", default=None)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
