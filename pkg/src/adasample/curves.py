"""Piecewise-linear curve approximation error and sampling-rate experiments.

A smooth curve approximated by M chords with endpoints on the curve has a
one-sided approximation error sup_t inf_s ||p(t) - f(s)|| that shrinks at
second order in M; for a circle the error has the closed form
r * (1 - cos(pi / M)). This module measures that error numerically, tabulates
it against the curvature-based bound, and measures how boundary localization
error of uniform-grid sampling decays with the sample budget N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree
from scipy.special import ellipe

from .boundary import extract_boundary, nearest_boundary_field
from .core import LabelMap, ScoreMap, TargetClassSet
from .resample import sample_labels
from .solver import EnergyParams, solve_sampling_tensor, uniform_tensor
from .upsample import build_coverage, upsample_labels


@dataclass(frozen=True)
class CurveSpec:
    """Arc-length parametrized plane curve on [s0, s0 + length].

    evaluator maps an array of arc-length values to an (n, 2) point array;
    length and max_curvature are exact for the built-in constructors.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    length: float
    max_curvature: float
    s0: float = 0.0
    closed: bool = False

    def points(self, s) -> np.ndarray:
        return np.asarray(self.evaluator(np.atleast_1d(np.asarray(s, dtype=np.float64))))


def circle_curve(radius: float = 1.0, center=(0.0, 0.0)) -> CurveSpec:
    if radius <= 0:
        raise ValueError("radius must be positive")
    cx, cy = center

    def ev(s):
        ang = s / radius
        return np.stack([cx + radius * np.cos(ang), cy + radius * np.sin(ang)], axis=-1)

    return CurveSpec(evaluator=ev, length=2.0 * math.pi * radius,
                     max_curvature=1.0 / radius, closed=True)


def line_curve(p0, p1) -> CurveSpec:
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    length = float(np.hypot(*(p1 - p0)))
    if length == 0:
        raise ValueError("line endpoints must differ")

    def ev(s):
        f = (s / length)[..., None]
        return p0 + f * (p1 - p0)

    return CurveSpec(evaluator=ev, length=length, max_curvature=0.0)


def ellipse_curve(a: float, b: float, center=(0.0, 0.0), inversion_samples: int = 8192) -> CurveSpec:
    """Ellipse x = a cos t, y = b sin t; arc length inverted from a dense
    cumulative table, so the evaluator is accurate to the table resolution."""
    if not (a >= b > 0):
        raise ValueError("require a >= b > 0")
    m = 1.0 - (b * b) / (a * a)
    length = float(4.0 * a * ellipe(m))
    cx, cy = center
    theta = np.linspace(0.0, 2.0 * math.pi, inversion_samples + 1)
    speed = np.sqrt(a * a * np.sin(theta) ** 2 + b * b * np.cos(theta) ** 2)
    # Cumulative trapezoid arc length, rescaled to the exact total length.
    arc = np.concatenate([[0.0], np.cumsum((speed[1:] + speed[:-1]) * 0.5 * np.diff(theta))])
    arc *= length / arc[-1]

    def ev(s):
        t = np.interp(np.clip(s, 0.0, length), arc, theta)
        return np.stack([cx + a * np.cos(t), cy + b * np.sin(t)], axis=-1)

    return CurveSpec(evaluator=ev, length=length, max_curvature=a / (b * b), closed=True)


@dataclass(frozen=True)
class PolyChain:
    """Ordered chord vertices; closed chains repeat the first vertex last."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 2:
            raise ValueError("vertices must be an (M+1) x 2 array with M >= 1")
        steps = np.hypot(np.diff(v[:, 0]), np.diff(v[:, 1]))
        if np.any(steps == 0.0):
            raise ValueError("consecutive chain vertices must be distinct")
        object.__setattr__(self, "vertices", v)

    @property
    def segment_count(self) -> int:
        return len(self.vertices) - 1


def approximate_curve(curve: CurveSpec, M: int) -> PolyChain:
    """Chain with M chords whose endpoints sit on the curve at uniform
    arc-length spacing."""
    if M < 1:
        raise ValueError("need at least one segment")
    s = curve.s0 + np.arange(M + 1) * (curve.length / M)
    pts = curve.points(s)
    if curve.closed:
        pts[-1] = pts[0]
    return PolyChain(vertices=pts)


def _refined_curve_distance(curve: CurveSpec, q: np.ndarray, tree: cKDTree,
                            s_grid: np.ndarray) -> float:
    """inf_s ||f(s) - q||: dense table lookup plus bounded local minimization."""
    d, i = tree.query(q)
    lo = s_grid[max(i - 1, 0)]
    hi = s_grid[min(i + 1, len(s_grid) - 1)]
    if hi <= lo:
        return float(d)
    res = minimize_scalar(lambda s: float(np.hypot(*(curve.points(s)[0] - q))),
                          bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    return float(min(d, res.fun))


def approx_error(curve: CurveSpec, chain: PolyChain, samples_per_segment: int = 64,
                 curve_samples: int = 4096) -> float:
    """sup over chain points of the distance to the curve.

    Dense two-sided sampling gets within the sample spacing; one local
    refinement pass (maximize over the chain around the best dense samples,
    minimize over the curve) brings the result well below 1e-6 for the smooth
    built-in curves.
    """
    if samples_per_segment < 2:
        raise ValueError("need at least 2 samples per segment")
    s_grid = curve.s0 + np.linspace(0.0, curve.length, curve_samples + 1)
    curve_pts = curve.points(s_grid)
    tree = cKDTree(curve_pts)

    v = chain.vertices
    f = np.linspace(0.0, 1.0, samples_per_segment + 1)
    # (M, spp+1, 2) dense chain points.
    dense = v[:-1, None, :] * (1.0 - f)[None, :, None] + v[1:, None, :] * f[None, :, None]
    flat = dense.reshape(-1, 2)
    d, idx = tree.query(flat)

    # Table lookups overestimate the true point-to-curve distance by the
    # tangential sample offset; a parabolic fit of the squared distance
    # through the three nearest table entries removes almost all of it.
    i0 = np.clip(idx, 1, len(s_grid) - 2)
    dm = ((curve_pts[i0 - 1] - flat) ** 2).sum(axis=1)
    d0 = ((curve_pts[i0] - flat) ** 2).sum(axis=1)
    dp = ((curve_pts[i0 + 1] - flat) ** 2).sum(axis=1)
    denom = dm - 2.0 * d0 + dp
    with np.errstate(divide="ignore", invalid="ignore"):
        step = 0.5 * (dm - dp) / denom
    step = np.clip(np.where(denom > 0, step, 0.0), -1.0, 1.0)
    s_star = s_grid[i0] + step * (curve.length / curve_samples)
    d_ref = np.hypot(*(curve.points(s_star) - flat).T)
    d = np.minimum(d, d_ref)
    best = float(d.max())

    # Refine around the strongest few segments; ties across symmetric segments
    # make one representative enough, extra ones are cheap insurance.
    per_seg = d.reshape(len(v) - 1, -1)
    seg_order = np.argsort(per_seg.max(axis=1))[::-1][:3]
    for k in seg_order:
        j = int(per_seg[k].argmax())
        lo = f[max(j - 1, 0)]
        hi = f[min(j + 1, samples_per_segment)]

        def neg_dist(t, k=k):
            q = v[k] * (1.0 - t) + v[k + 1] * t
            return -_refined_curve_distance(curve, q, tree, s_grid)

        res = minimize_scalar(neg_dist, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, float(-res.fun))
    return best


def bound_experiment(curve: CurveSpec, M_list, samples_per_segment: int = 64) -> list:
    """Measured error per M against the curvature bounds.

    Columns report both the small-angle form kappa*l^2/(8 M^2) and the exact
    cosine form (1 - cos(kappa*l/(2M)))/kappa of the chord-arc bound, plus
    eps*M^2 to expose the second-order constant; N = 3M records the
    three-samples-per-corner budget.
    """
    M_list = [int(m) for m in M_list]
    if any(b <= a for a, b in zip(M_list, M_list[1:])):
        raise ValueError("M_list must be strictly increasing")
    kappa, l = curve.max_curvature, curve.length
    rows = []
    for M in M_list:
        chain = approximate_curve(curve, M)
        eps = approx_error(curve, chain, samples_per_segment)
        alpha = kappa * l / (2.0 * M)
        if kappa > 0:
            bound_cos = (1.0 - math.cos(alpha)) / kappa
            ratio = eps / bound_cos if bound_cos > 0 else float("nan")
        else:
            bound_cos = 0.0
            ratio = float("nan")
        rows.append({
            "M": M,
            "N": 3 * M,
            "epsilon": eps,
            "bound_cosine": bound_cos,
            "bound_small_angle": kappa * l * l / (8.0 * M * M),
            "eps_times_M2": eps * M * M,
            "ratio_to_bound": ratio,
        })
    return rows


def _oracle_upsampled(shape: LabelMap, phi) -> LabelMap:
    """Classify each sample from ground truth, then interpolate back up."""
    ids = sample_labels(shape, phi)
    num_classes = max(int(shape.labels.max()), int(ids.max())) + 1
    h, w = ids.shape
    scores = np.zeros((num_classes, h, w))
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    scores[ids, ii, jj] = 1.0
    cov = build_coverage(phi, shape.grid)
    return upsample_labels(ScoreMap(scores=scores, grid_h=h, grid_w=w), cov)


def _max_boundary_miss(pred: LabelMap, shape: LabelMap, edt: np.ndarray) -> float:
    mis = pred.labels != shape.labels
    if not mis.any():
        return 0.0
    return float(edt[mis].max())


def uniform_grid_boundary_error(shape: LabelMap, N_list, targets: TargetClassSet,
                                include_adaptive: bool = False):
    """Boundary localization error of n x n uniform sampling per budget N.

    Each requested N rounds to the nearest square n^2 (recorded per row).
    Error = largest Euclidean distance from a misclassified pixel to the true
    boundary after oracle classification and interpolation. Returns the row
    table and the log-log slope of error versus actual N, fitted over rows
    with positive error.
    """
    bmask = extract_boundary(shape, targets)
    if bmask.num_pixels == 0:
        raise ValueError("shape has no target boundary")
    edt = ndimage.distance_transform_edt(~bmask.mask)
    rows = []
    for N in N_list:
        n = max(2, round(math.sqrt(N)))
        row = {"N_requested": int(N), "n": n, "N": n * n}
        phi_u = uniform_tensor(n, n)
        row["uniform_error"] = _max_boundary_miss(_oracle_upsampled(shape, phi_u),
                                                  shape, edt)
        if include_adaptive:
            field = nearest_boundary_field(bmask, n, n)
            phi_a = solve_sampling_tensor(field, EnergyParams(lam=0.0))
            row["adaptive_error"] = _max_boundary_miss(_oracle_upsampled(shape, phi_a),
                                                       shape, edt)
        rows.append(row)
    pts = [(r["N"], r["uniform_error"]) for r in rows if r["uniform_error"] > 0]
    if len(pts) >= 2:
        ns, errs = zip(*pts)
        slope = float(np.polyfit(np.log(ns), np.log(errs), 1)[0])
    else:
        slope = float("nan")
    return rows, slope
