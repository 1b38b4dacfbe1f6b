"""Invert non-uniform sampling by rasterizing the sampling grid's triangles.

The sampling grid keeps quad topology, so no general triangulation is needed:
every cell splits into two triangles along its anti-diagonal, and each output
pixel is located inside one triangle whose barycentric weights blend the
sparse per-vertex scores back to full resolution.

Rasterization is scanline-based: each triangle contributes per-row column
spans, candidates are resolved per pixel (most-interior triangle wins, pixels
exactly on shared edges go to the owner under a top-left rule, lowest triangle
index breaks remaining ties), and rare pixels missed because of
floating-point slivers or fully collapsed cells are attached to the nearest
triangle by true point-to-triangle distance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import LabelMap, PixelGrid, ScoreMap
from .solver import SamplingTensor

# Containment tolerance on normalized barycentric weights.
_BAND = 1e-9


@dataclass(frozen=True)
class RasterCoverage:
    """Pixel-to-triangle assignment of an output grid.

    Triangle t covers cell (t // 2) of the (h-1) x (w-1) cell grid, row-major;
    even t is the (i,j)-(i+1,j)-(i,j+1) half, odd t the
    (i+1,j)-(i,j+1)-(i+1,j+1) half.
    """

    grid: PixelGrid
    tensor_h: int
    tensor_w: int
    tri_index: np.ndarray
    bary: np.ndarray
    num_inverted: int = 0
    num_degenerate: int = 0
    num_fallback: int = 0
    num_candidates: int = 0

    def __post_init__(self):
        t = np.asarray(self.tri_index)
        b = np.asarray(self.bary, dtype=np.float64)
        n_tri = 2 * (self.tensor_h - 1) * (self.tensor_w - 1)
        if t.shape != self.grid.shape:
            raise ValueError("tri_index shape does not match the output grid")
        if b.shape != self.grid.shape + (3,):
            raise ValueError("bary shape does not match the output grid")
        if t.min() < 0 or t.max() >= n_tri:
            raise ValueError("tri_index contains unassigned or out-of-range entries")
        object.__setattr__(self, "tri_index", t)
        object.__setattr__(self, "bary", b)

    @property
    def num_triangles(self) -> int:
        return 2 * (self.tensor_h - 1) * (self.tensor_w - 1)


def triangle_vertex_indices(h: int, w: int) -> np.ndarray:
    """(T, 3) flat vertex ids (row-major i*w+j) for the canonical cell split."""
    ci, cj = np.meshgrid(np.arange(h - 1), np.arange(w - 1), indexing="ij")
    v00 = (ci * w + cj).ravel()
    v10 = v00 + w
    v01 = v00 + 1
    v11 = v10 + 1
    tv = np.empty((2 * (h - 1) * (w - 1), 3), dtype=np.int64)
    tv[0::2] = np.stack([v00, v10, v01], axis=1)
    tv[1::2] = np.stack([v10, v01, v11], axis=1)
    return tv


def _edge_functions(px, py, ax, ay, bx, by, cx, cy):
    """Signed edge functions; eK is zero on the edge opposite vertex K and
    equals the signed doubled area at K."""
    ea = (cx - bx) * (py - by) - (cy - by) * (px - bx)
    eb = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
    ec = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    return ea, eb, ec


def _signed_area2(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _top_left(dx, dy):
    """Edge-ownership predicate: exactly one of d and -d passes, so a pixel on
    a shared edge is claimed by exactly one of the two adjacent triangles."""
    return (dy < 0) | ((dy == 0) & (dx < 0))


def build_coverage(phi: SamplingTensor, out_grid: PixelGrid) -> RasterCoverage:
    """Assign every output pixel a containing triangle and barycentric weights.

    Covering constraints guarantee the triangle fan spans the whole image, so
    coverage is total even for folded (inverted) grids; inverted triangles are
    counted and reported with a warning, collapsed ones resolve through the
    nearest-vertex rule.
    """
    h, w = phi.grid_h, phi.grid_w
    H, W = out_grid.shape
    vy = phi.phi[0].ravel() * (H - 1)
    vx = phi.phi[1].ravel() * (W - 1)
    tv = triangle_vertex_indices(h, w)
    ax, ay = vx[tv[:, 0]], vy[tv[:, 0]]
    bx, by = vx[tv[:, 1]], vy[tv[:, 1]]
    cx, cy = vx[tv[:, 2]], vy[tv[:, 2]]
    denom = _signed_area2(ax, ay, bx, by, cx, cy)

    # Canonical orientation alternates between the two halves of a cell.
    ref_sign = np.where(np.arange(len(tv)) % 2 == 0, -1.0, 1.0)
    degenerate = denom == 0.0
    inverted = ~degenerate & (np.sign(denom) != ref_sign)
    num_inverted = int(inverted.sum())
    num_degenerate = int(degenerate.sum())
    if num_inverted:
        warnings.warn(f"sampling grid folds over itself: {num_inverted} inverted "
                      "triangles rasterized with the absolute-area rule", RuntimeWarning,
                      stacklevel=2)

    cand = _candidates(ax, ay, bx, by, cx, cy, degenerate, H, W)
    tri_c, row_c, col_c = cand
    px = col_c.astype(np.float64)
    py = row_c.astype(np.float64)
    ea, eb, ec = _edge_functions(px, py, ax[tri_c], ay[tri_c], bx[tri_c], by[tri_c],
                                 cx[tri_c], cy[tri_c])
    d = denom[tri_c]
    wa, wb, wc = ea / d, eb / d, ec / d
    wmin = np.minimum(np.minimum(wa, wb), wc)
    pix = row_c * W + col_c

    tri_index = np.full(H * W, -1, dtype=np.int64)
    bary = np.zeros((H * W, 3))

    # Pass 1: strictly interior claims; the most interior triangle wins,
    # exact-tie strengths go to the lowest triangle index.
    strict = wmin > _BAND
    rows = _rows_with_max(pix[strict], wmin[strict], tri_c[strict])
    _assign(tri_index, bary, pix[strict], tri_c[strict],
            wa[strict], wb[strict], wc[strict], rows)

    # Pass 2: pixels only reached through a triangle edge or vertex; the
    # owning triangle under the top-left rule wins, otherwise the lowest
    # claimant index.
    on_edge = (wmin >= -_BAND) & ~strict & (tri_index[pix] < 0)
    if on_edge.any():
        te = tri_c[on_edge]
        sigma = np.sign(denom[te])
        we = np.stack([wa[on_edge], wb[on_edge], wc[on_edge]], axis=1)
        # Edge opposite A runs B->C, opposite B runs C->A, opposite C runs A->B.
        dxs = np.stack([cx[te] - bx[te], ax[te] - cx[te], bx[te] - ax[te]], axis=1)
        dys = np.stack([cy[te] - by[te], ay[te] - cy[te], by[te] - ay[te]], axis=1)
        owns = _top_left(sigma[:, None] * dxs, sigma[:, None] * dys)
        passes = (~(np.abs(we) <= _BAND) | owns).all(axis=1)
        n_tri = len(ax)
        rank = te + np.where(passes, 0, n_tri)
        rows = _rows_with_max(pix[on_edge], -rank.astype(np.float64), te)
        _assign(tri_index, bary, pix[on_edge], te,
                wa[on_edge], wb[on_edge], wc[on_edge], rows)

    # Pass 3: sliver gaps and collapsed cells attach to the nearest triangle.
    missing = np.nonzero(tri_index < 0)[0]
    if len(missing) > 0:
        _assign_nearest(tri_index, bary, missing, W,
                        ax, ay, bx, by, cx, cy, denom, degenerate)

    cov = RasterCoverage(grid=out_grid, tensor_h=h, tensor_w=w,
                         tri_index=tri_index.reshape(H, W).astype(np.int32),
                         bary=bary.reshape(H, W, 3),
                         num_inverted=num_inverted, num_degenerate=num_degenerate,
                         num_fallback=len(missing), num_candidates=len(tri_c))
    return cov


def _candidates(ax, ay, bx, by, cx, cy, degenerate, H, W):
    """Scanline candidate (triangle, row, col) triples.

    Spans come from exact row/edge intersections padded by a size-relative
    epsilon, so every pixel within the containment tolerance of a triangle
    shows up as a candidate; bounding by spans instead of boxes keeps the
    candidate count near the covered area even for long thin triangles.
    """
    xs = np.stack([ax, bx, cx])
    ys = np.stack([ay, by, cy])
    diag = np.hypot(xs.max(axis=0) - xs.min(axis=0), ys.max(axis=0) - ys.min(axis=0))
    # The tolerance region {min weight >= -eps} is the triangle scaled about
    # its centroid; vertices move by at most 2*eps*diag, so this pad makes the
    # span candidates a superset of every within-tolerance pixel.
    pad = 2.0 * _BAND * diag + 1e-6

    active = ~degenerate
    r0 = np.clip(np.ceil(ys.min(axis=0) - pad), 0, H - 1).astype(np.int64)
    r1 = np.clip(np.floor(ys.max(axis=0) + pad), 0, H - 1).astype(np.int64)
    heights = np.where(active, r1 - r0 + 1, 0)

    tri_r = np.repeat(np.arange(len(ax)), heights)
    starts = np.concatenate([[0], np.cumsum(heights)[:-1]])
    local = np.arange(heights.sum()) - np.repeat(starts, heights)
    rows = r0[tri_r] + local
    ry = rows.astype(np.float64)
    pad_r = pad[tri_r]

    # Column span of each (triangle, row) pair: every edge whose y-interval
    # overlaps the padded row contributes its clamped intersection point.
    span_lo = np.full(len(tri_r), np.inf)
    span_hi = np.full(len(tri_r), -np.inf)
    edges = ((ax, ay, bx, by), (bx, by, cx, cy), (cx, cy, ax, ay))
    for x1, y1, x2, y2 in edges:
        x1t, y1t, x2t, y2t = x1[tri_r], y1[tri_r], x2[tri_r], y2[tri_r]
        near = (np.minimum(y1t, y2t) <= ry + pad_r) & (np.maximum(y1t, y2t) >= ry - pad_r)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.clip((ry - y1t) / (y2t - y1t), 0.0, 1.0)
        sloped = near & (y1t != y2t)
        xc = x1t + s * (x2t - x1t)
        span_lo = np.where(sloped, np.minimum(span_lo, xc), span_lo)
        span_hi = np.where(sloped, np.maximum(span_hi, xc), span_hi)
        flat = near & (y1t == y2t)
        span_lo = np.where(flat, np.minimum(span_lo, np.minimum(x1t, x2t)), span_lo)
        span_hi = np.where(flat, np.maximum(span_hi, np.maximum(x1t, x2t)), span_hi)

    c0 = np.clip(np.ceil(span_lo - pad_r), 0, W - 1).astype(np.int64)
    c1 = np.clip(np.floor(span_hi + pad_r), 0, W - 1).astype(np.int64)
    widths = np.where(span_lo <= span_hi, np.maximum(c1 - c0 + 1, 0), 0)

    tri_cand = np.repeat(tri_r, widths)
    row_cand = np.repeat(rows, widths)
    cstarts = np.concatenate([[0], np.cumsum(widths)[:-1]])
    clocal = np.arange(widths.sum()) - np.repeat(cstarts, widths)
    col_cand = np.repeat(c0, widths) + clocal
    return tri_cand, row_cand, col_cand


def _rows_with_max(pix, value, tri):
    """Candidate row index per pixel with the largest value; exact value ties
    resolve to the lowest triangle index. No (pixel, triangle) pair repeats,
    so the winner is unique."""
    if len(pix) == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(pix, kind="stable")
    ps = pix[order]
    first = np.ones(len(ps), dtype=bool)
    first[1:] = ps[1:] != ps[:-1]
    starts = np.nonzero(first)[0]
    sid = np.cumsum(first) - 1
    vs = value[order]
    vmax = np.maximum.reduceat(vs, starts)
    win = vs == vmax[sid]
    ts = np.where(win, tri[order], np.iinfo(np.int64).max)
    tbest = np.minimum.reduceat(ts, starts)
    return order[win & (tri[order] == tbest[sid])]


def _assign(tri_index, bary, pix, tris, wa, wb, wc, rows):
    """Write the selected rows' claims, skipping already-assigned pixels."""
    if len(rows) == 0:
        return
    fresh = tri_index[pix[rows]] < 0
    rows = rows[fresh]
    tri_index[pix[rows]] = tris[rows]
    bary[pix[rows], 0] = wa[rows]
    bary[pix[rows], 1] = wb[rows]
    bary[pix[rows], 2] = wc[rows]


def _segment_dist2(px, py, x1, y1, x2, y2):
    """Squared distance to a segment plus the clamped projection parameter."""
    dx, dy = x2 - x1, y2 - y1
    L2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((px - x1) * dx + (py - y1) * dy) / L2
    t = np.where(L2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    qx = x1 + t * dx
    qy = y1 + t * dy
    return (px - qx) ** 2 + (py - qy) ** 2, t


def _assign_nearest(tri_index, bary, missing, W, ax, ay, bx, by, cx, cy,
                    denom, degenerate, chunk=2048):
    """Attach pixels missed by scanlining to the nearest triangle.

    Weights come from the projected point (interior hits keep their true
    barycentrics); a collapsed nearest triangle puts weight 1 on its nearest
    vertex.
    """
    T = len(ax)
    for lo in range(0, len(missing), chunk):
        pidx = missing[lo:lo + chunk]
        px = (pidx % W).astype(np.float64)[:, None]
        py = (pidx // W).astype(np.float64)[:, None]

        ea, eb, ec = _edge_functions(px, py, ax[None, :], ay[None, :], bx[None, :],
                                     by[None, :], cx[None, :], cy[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            wa = ea / denom[None, :]
            wb = eb / denom[None, :]
            wc = ec / denom[None, :]
        inside = (~degenerate[None, :]) & (wa >= 0) & (wb >= 0) & (wc >= 0)

        d_ab, t_ab = _segment_dist2(px, py, ax[None, :], ay[None, :], bx[None, :], by[None, :])
        d_bc, t_bc = _segment_dist2(px, py, bx[None, :], by[None, :], cx[None, :], cy[None, :])
        d_ca, t_ca = _segment_dist2(px, py, cx[None, :], cy[None, :], ax[None, :], ay[None, :])
        edge_d2 = np.stack([d_ab, d_bc, d_ca])
        best_edge = edge_d2.argmin(axis=0)
        d2 = np.take_along_axis(edge_d2, best_edge[None], axis=0)[0]
        d2 = np.where(inside, 0.0, d2)

        win = d2.argmin(axis=1)
        rows = np.arange(len(pidx))
        tri_index[pidx] = win

        w_in = np.stack([wa[rows, win], wb[rows, win], wc[rows, win]], axis=1)
        e_sel = best_edge[rows, win]
        t_sel = np.stack([t_ab, t_bc, t_ca])[e_sel, rows, win]
        w_edge = np.zeros((len(pidx), 3))
        for k, (i1, i2) in enumerate(((0, 1), (1, 2), (2, 0))):
            m = e_sel == k
            w_edge[m, i1] = 1.0 - t_sel[m]
            w_edge[m, i2] = t_sel[m]
        use_inside = inside[rows, win]
        weights = np.where(use_inside[:, None], w_in, w_edge)

        # Collapsed triangle: all weight on its nearest vertex.
        degen_win = degenerate[win]
        if degen_win.any():
            vx3 = np.stack([ax[win], bx[win], cx[win]], axis=1)
            vy3 = np.stack([ay[win], by[win], cy[win]], axis=1)
            vd2 = (vx3 - px) ** 2 + (vy3 - py) ** 2
            nearest_v = vd2.argmin(axis=1)
            onehot = np.zeros((len(pidx), 3))
            onehot[rows, nearest_v] = 1.0
            weights = np.where(degen_win[:, None], onehot, weights)

        bary[pidx] = weights


def upsample_scores(scores: ScoreMap, coverage: RasterCoverage) -> np.ndarray:
    """Blend vertex score vectors with barycentric weights; returns K x H x W.

    The blend is evaluated as s2 + w0*(s0 - s2) + w1*(s1 - s2): algebraically
    the plain weighted sum, but exact on constant fields even when the three
    weights do not sum to exactly 1.0 in floating point.
    """
    if (scores.grid_h, scores.grid_w) != (coverage.tensor_h, coverage.tensor_w):
        raise ValueError(
            f"score grid {(scores.grid_h, scores.grid_w)} does not match coverage tensor "
            f"grid {(coverage.tensor_h, coverage.tensor_w)}")
    tv = triangle_vertex_indices(coverage.tensor_h, coverage.tensor_w)
    flat_scores = scores.scores.reshape(scores.num_classes, -1)
    tri = coverage.tri_index.ravel()
    bary = coverage.bary.reshape(-1, 3)
    s0 = flat_scores[:, tv[tri, 0]]
    s1 = flat_scores[:, tv[tri, 1]]
    s2 = flat_scores[:, tv[tri, 2]]
    out_flat = s2 + bary[:, 0] * (s0 - s2) + bary[:, 1] * (s1 - s2)
    return out_flat.reshape((scores.num_classes,) + coverage.grid.shape)


def upsample_labels(scores: ScoreMap, coverage: RasterCoverage) -> LabelMap:
    """Interpolate scores, then take the per-pixel argmax (ties to the lowest
    class id)."""
    blended = upsample_scores(scores, coverage)
    return LabelMap(grid=coverage.grid, labels=np.argmax(blended, axis=0).astype(np.int64))
