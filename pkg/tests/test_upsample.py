"""Triangle rasterization of the sampling grid and barycentric upsampling.

The scanline rasterizer is checked against a brute-force oracle that evaluates
every triangle at every pixel and applies the same resolution policy (most
interior wins, top-left edge ownership, nearest-triangle fallback). The oracle
shares no scanline machinery, so agreement must be bit-exact per the contract.
"""

import warnings

import numpy as np
import pytest

from adasample.boundary import NearestBoundaryField
from adasample.core import PixelGrid, ScoreMap
from adasample.solver import (
    EnergyParams,
    SamplingTensor,
    project_constraints,
    solve_sampling_tensor,
    uniform_tensor,
)
from adasample.upsample import (
    _BAND,
    RasterCoverage,
    build_coverage,
    triangle_vertex_indices,
    upsample_labels,
    upsample_scores,
)


def solved_tensor(rng, h, w, lam=1.0):
    field = NearestBoundaryField(grid_h=h, grid_w=w, coords=rng.random((2, h, w)))
    return solve_sampling_tensor(field, EnergyParams(lam=lam))


def quiet_coverage(phi, grid):
    # Random tensors routinely fold; the warning is the subject of its own test.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return build_coverage(phi, grid)


def _oracle_seg_d2(px, py, x1, y1, x2, y2):
    dx, dy = x2 - x1, y2 - y1
    L2 = dx * dx + dy * dy
    with np.errstate(divide="ignore", invalid="ignore"):
        t = ((px - x1) * dx + (py - y1) * dy) / L2
    t = np.where(L2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    qx = x1 + t * dx
    qy = y1 + t * dy
    return (px - qx) ** 2 + (py - qy) ** 2, t


def brute_coverage(phi, out_grid):
    """All-pairs rasterization oracle; materializes pixel x triangle tables."""
    H, W = out_grid.shape
    h, w = phi.grid_h, phi.grid_w
    vy = phi.phi[0].ravel() * (H - 1)
    vx = phi.phi[1].ravel() * (W - 1)
    tv = triangle_vertex_indices(h, w)
    ax, ay = vx[tv[:, 0]], vy[tv[:, 0]]
    bx, by = vx[tv[:, 1]], vy[tv[:, 1]]
    cx, cy = vx[tv[:, 2]], vy[tv[:, 2]]
    denom = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
    degen = denom == 0.0
    n_tri = len(ax)
    P = H * W

    px = np.tile(np.arange(W, dtype=np.float64), H)[:, None]
    py = np.repeat(np.arange(H, dtype=np.float64), W)[:, None]
    ea = (cx - bx) * (py - by) - (cy - by) * (px - bx)
    eb = (ax - cx) * (py - cy) - (ay - cy) * (px - cx)
    ec = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    with np.errstate(divide="ignore", invalid="ignore"):
        wa = ea / denom
        wb = eb / denom
        wc = ec / denom
    wmin = np.minimum(np.minimum(wa, wb), wc)

    tri_index = np.full(P, -1, dtype=np.int64)
    bary = np.zeros((P, 3))

    # Strictly interior claims: the most interior triangle takes the pixel,
    # exact strength ties go to the lowest triangle index.
    active = ~degen[None, :]
    strict = active & (wmin > _BAND)
    v1 = np.where(strict, wmin, -np.inf)
    vmax = v1.max(axis=1)
    has1 = vmax > -np.inf
    winners = strict & (v1 == vmax[:, None])
    t1 = winners.argmax(axis=1)
    idx1 = np.nonzero(has1)[0]
    tri_index[idx1] = t1[idx1]
    for k, wk in enumerate((wa, wb, wc)):
        bary[idx1, k] = wk[idx1, t1[idx1]]

    # Edge/vertex pixels: a triangle passes if it owns (top-left in canonical
    # orientation) every edge the pixel sits on; lowest passing index wins,
    # then lowest claimant.
    near = active & (wmin >= -_BAND) & ~has1[:, None]
    sigma = np.sign(denom)
    dxs = np.stack([cx - bx, ax - cx, bx - ax], axis=1)
    dys = np.stack([cy - by, ay - cy, by - ay], axis=1)
    sdx = sigma[:, None] * dxs
    sdy = sigma[:, None] * dys
    owns = (sdy < 0) | ((sdy == 0) & (sdx < 0))
    ws = np.stack([wa, wb, wc], axis=2)
    passes = (~(np.abs(ws) <= _BAND) | owns[None, :, :]).all(axis=2)
    rank = np.arange(n_tri)[None, :] + np.where(passes, 0, n_tri)
    rank = np.where(near, rank, 3 * n_tri)
    has2 = near.any(axis=1)
    t2 = rank.argmin(axis=1)
    idx2 = np.nonzero(has2)[0]
    tri_index[idx2] = t2[idx2]
    for k, wk in enumerate((wa, wb, wc)):
        bary[idx2, k] = wk[idx2, t2[idx2]]

    # Leftovers attach to the nearest triangle by true point distance; weights
    # come from the projected point, collapsed winners one-hot their nearest
    # vertex.
    rest = np.nonzero(tri_index < 0)[0]
    if len(rest):
        pxr, pyr = px[rest], py[rest]
        d_ab, t_ab = _oracle_seg_d2(pxr, pyr, ax[None, :], ay[None, :], bx[None, :], by[None, :])
        d_bc, t_bc = _oracle_seg_d2(pxr, pyr, bx[None, :], by[None, :], cx[None, :], cy[None, :])
        d_ca, t_ca = _oracle_seg_d2(pxr, pyr, cx[None, :], cy[None, :], ax[None, :], ay[None, :])
        inside = (~degen[None, :]) & (wa[rest] >= 0) & (wb[rest] >= 0) & (wc[rest] >= 0)
        edge_d2 = np.stack([d_ab, d_bc, d_ca])
        best_edge = edge_d2.argmin(axis=0)
        d2 = np.take_along_axis(edge_d2, best_edge[None], axis=0)[0]
        d2 = np.where(inside, 0.0, d2)
        win = d2.argmin(axis=1)
        rows = np.arange(len(rest))
        w_in = np.stack([wa[rest][rows, win], wb[rest][rows, win], wc[rest][rows, win]], axis=1)
        e_sel = best_edge[rows, win]
        t_sel = np.stack([t_ab, t_bc, t_ca])[e_sel, rows, win]
        w_edge = np.zeros((len(rest), 3))
        for k, (i1, i2) in enumerate(((0, 1), (1, 2), (2, 0))):
            m = e_sel == k
            w_edge[m, i1] = 1.0 - t_sel[m]
            w_edge[m, i2] = t_sel[m]
        weights = np.where(inside[rows, win][:, None], w_in, w_edge)
        degen_win = degen[win]
        if degen_win.any():
            vx3 = np.stack([ax[win], bx[win], cx[win]], axis=1)
            vy3 = np.stack([ay[win], by[win], cy[win]], axis=1)
            vd2 = (vx3 - pxr) ** 2 + (vy3 - pyr) ** 2
            nearest_v = vd2.argmin(axis=1)
            onehot = np.zeros((len(rest), 3))
            onehot[rows, nearest_v] = 1.0
            weights = np.where(degen_win[:, None], onehot, weights)
        tri_index[rest] = win
        bary[rest] = weights
    return tri_index.reshape(H, W), bary.reshape(H, W, 3)


def collapsed_cell_tensor():
    # All four vertices of the top-left cell sit at the origin, so both of its
    # triangles have zero area.
    p0 = np.array([[0, 0, 0], [0, 0, 0.5], [1, 1, 1.0]])
    p1 = np.array([[0, 0, 1], [0, 0, 1], [0, 0.5, 1.0]])
    return SamplingTensor(np.stack([p0, p1]))


def test_triangle_vertex_indices_small():
    np.testing.assert_array_equal(triangle_vertex_indices(2, 2), [[0, 2, 1], [2, 1, 3]])
    tv = triangle_vertex_indices(3, 4)
    assert tv.shape == (12, 3)
    # Both halves of a cell share the anti-diagonal vertex pair.
    for cell in range(6):
        even, odd = tv[2 * cell], tv[2 * cell + 1]
        assert {even[1], even[2]} == {odd[0], odd[1]}


class TestBuildCoverage:
    def test_full_resolution_uniform_hits_own_vertex(self):
        for n in (5, 6, 10, 17):
            cov = build_coverage(uniform_tensor(n, n), PixelGrid(n, n))
            b = cov.bary.reshape(-1, 3)
            tv = triangle_vertex_indices(n, n)
            own = tv[cov.tri_index.ravel(), np.argmax(b, axis=1)]
            np.testing.assert_array_equal(own, np.arange(n * n))
            dev = np.abs(np.sort(b, axis=1) - np.array([0.0, 0.0, 1.0])).max()
            assert dev < 1e-12
            if n in (5, 17):  # vertex positions are exact dyadics here
                assert dev == 0.0

    def test_two_by_two_split_membership(self):
        H = W = 7
        cov = build_coverage(uniform_tensor(2, 2), PixelGrid(H, W))
        rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        lhs = rr * (W - 1) + cc * (H - 1)
        below = lhs < (H - 1) * (W - 1)
        above = lhs > (H - 1) * (W - 1)
        np.testing.assert_array_equal(cov.tri_index[below], 0)
        np.testing.assert_array_equal(cov.tri_index[above], 1)
        # Anti-diagonal pixels go to the owning lower triangle except at the
        # shared vertex (0, 6), where neither owns and the lowest index wins.
        diag = [cov.tri_index[r, 6 - r] for r in range(7)]
        assert diag == [0, 1, 1, 1, 1, 1, 1]

    def test_two_by_two_weights_reproduce_position(self):
        H, W = 9, 13
        cov = build_coverage(uniform_tensor(2, 2), PixelGrid(H, W))
        tv = triangle_vertex_indices(2, 2)
        vy = uniform_tensor(2, 2).phi[0].ravel() * (H - 1)
        vx = uniform_tensor(2, 2).phi[1].ravel() * (W - 1)
        vids = tv[cov.tri_index]
        rec_y = (cov.bary * vy[vids]).sum(axis=2)
        rec_x = (cov.bary * vx[vids]).sum(axis=2)
        rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        np.testing.assert_allclose(rec_y, rr, atol=1e-12)
        np.testing.assert_allclose(rec_x, cc, atol=1e-12)

    def test_random_tensors_full_cover(self):
        rng = np.random.default_rng(0)
        grid = PixelGrid(64, 64)
        for trial in range(100):
            phi = project_constraints(rng.random((2, 8, 8)))
            cov = quiet_coverage(phi, grid)  # post_init rejects any hole
            assert cov.tri_index.min() >= 0
            assert cov.tri_index.max() < cov.num_triangles
            sums = cov.bary.sum(axis=2)
            np.testing.assert_allclose(sums, 1.0, atol=1e-9)
            assert cov.bary.min() >= -1e-9

    def test_bit_identical_to_brute_oracle(self):
        rng = np.random.default_rng(1)
        cases = [
            (solved_tensor(rng, 8, 8), PixelGrid(64, 64)),
            (solved_tensor(rng, 8, 8, lam=0.2), PixelGrid(48, 56)),
            (project_constraints(rng.random((2, 6, 5))), PixelGrid(33, 29)),
            (project_constraints(rng.random((2, 4, 4))), PixelGrid(40, 40)),
            (uniform_tensor(4, 4), PixelGrid(31, 31)),
            (uniform_tensor(2, 2), PixelGrid(16, 16)),
            (collapsed_cell_tensor(), PixelGrid(21, 21)),
            (solved_tensor(rng, 5, 5, lam=0.5), PixelGrid(128, 128)),
        ]
        for phi, grid in cases:
            cov = quiet_coverage(phi, grid)
            tri_want, bary_want = brute_coverage(phi, grid)
            np.testing.assert_array_equal(cov.tri_index, tri_want)
            np.testing.assert_array_equal(cov.bary, bary_want)

    def test_collapsed_cell_counted_and_covered(self):
        cov = build_coverage(collapsed_cell_tensor(), PixelGrid(21, 21))
        assert cov.num_degenerate >= 2
        assert cov.tri_index.min() >= 0
        np.testing.assert_allclose(cov.bary.sum(axis=2), 1.0, atol=1e-9)

    def test_inverted_grid_warns(self):
        phi_arr = uniform_tensor(4, 4).phi.copy()
        phi_arr[0, 1, :] = 0.8
        phi_arr[0, 2, :] = 0.2
        with pytest.warns(RuntimeWarning, match="folds over itself"):
            cov = build_coverage(SamplingTensor(phi_arr), PixelGrid(20, 20))
        assert cov.num_inverted > 0

    def test_coverage_validation(self):
        grid = PixelGrid(4, 4)
        with pytest.raises(ValueError):
            RasterCoverage(grid=grid, tensor_h=2, tensor_w=2,
                           tri_index=np.zeros((3, 4), dtype=int),
                           bary=np.zeros((4, 4, 3)))
        with pytest.raises(ValueError):
            RasterCoverage(grid=grid, tensor_h=2, tensor_w=2,
                           tri_index=np.full((4, 4), -1),
                           bary=np.zeros((4, 4, 3)))


class TestUpsampleScores:
    def test_constant_scores_exactly_constant(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            phi = project_constraints(rng.random((2, 6, 6)))
            cov = quiet_coverage(phi, PixelGrid(40, 40))
            scores = ScoreMap(grid_h=6, grid_w=6,
                              scores=np.full((3, 6, 6), 0.37))
            out = upsample_scores(scores, cov)
            np.testing.assert_array_equal(out, np.full((3, 40, 40), 0.37))

    def test_one_hot_vertex_recovers_weights(self):
        rng = np.random.default_rng(3)
        phi = solved_tensor(rng, 5, 5)
        cov = quiet_coverage(phi, PixelGrid(30, 30))
        tv = triangle_vertex_indices(5, 5)
        vstar = 12
        scores = np.zeros((1, 5, 5))
        scores[0].ravel()[vstar] = 1.0
        out = upsample_scores(ScoreMap(grid_h=5, grid_w=5, scores=scores), cov)[0]
        vids = tv[cov.tri_index]
        expect = np.zeros((30, 30))
        for k in range(3):
            m = vids[:, :, k] == vstar
            expect[m] = cov.bary[:, :, k][m]
        # First two weight slots pass through the blend untouched; the third
        # is reconstructed as 1 - w0 - w1 and may differ by float dust.
        np.testing.assert_allclose(out, expect, atol=2e-12)
        slot0 = vids[:, :, 0] == vstar
        np.testing.assert_array_equal(out[slot0], cov.bary[:, :, 0][slot0])

    def test_affine_fields_reproduced(self):
        rng = np.random.default_rng(4)
        phi = solved_tensor(rng, 8, 8)
        H = W = 65
        cov = quiet_coverage(phi, PixelGrid(H, W))
        vy = phi.phi[0] * (H - 1)
        vx = phi.phi[1] * (W - 1)
        scores = np.stack([0.3 * vy - 0.1 * vx + 0.5, vy * 0 + 1.0, vx])
        out = upsample_scores(ScoreMap(grid_h=8, grid_w=8, scores=scores), cov)
        rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
        assert cov.num_fallback == 0  # fallback projects the point; exclude
        np.testing.assert_allclose(out[0], 0.3 * rr - 0.1 * cc + 0.5, atol=1e-6)
        np.testing.assert_allclose(out[1], 1.0, atol=1e-9)
        np.testing.assert_allclose(out[2], cc, atol=1e-6)

    def test_row_coordinate_ramp(self):
        rng = np.random.default_rng(5)
        phi = solved_tensor(rng, 8, 8)
        H = W = 33
        cov = quiet_coverage(phi, PixelGrid(H, W))
        scores = ScoreMap(grid_h=8, grid_w=8, scores=phi.phi[0][None].copy())
        out = upsample_scores(scores, cov)[0]
        ramp = np.arange(H)[:, None] / (H - 1)
        assert cov.num_fallback == 0
        np.testing.assert_allclose(out, np.broadcast_to(ramp, (H, W)), atol=1e-6)

    def test_values_within_vertex_hull(self):
        rng = np.random.default_rng(6)
        phi = project_constraints(rng.random((2, 7, 7)))
        cov = quiet_coverage(phi, PixelGrid(50, 50))
        raw = rng.normal(size=(2, 7, 7))
        out = upsample_scores(ScoreMap(grid_h=7, grid_w=7, scores=raw), cov)
        tv = triangle_vertex_indices(7, 7)
        vids = tv[cov.tri_index]
        for chan in range(2):
            vvals = raw[chan].ravel()[vids]
            lo = vvals.min(axis=2)
            hi = vvals.max(axis=2)
            slack = 1e-8 * (np.abs(raw).max() + 1.0)
            assert (out[chan] >= lo - slack).all()
            assert (out[chan] <= hi + slack).all()

    def test_shape_mismatch(self):
        cov = build_coverage(uniform_tensor(4, 4), PixelGrid(16, 16))
        with pytest.raises(ValueError):
            upsample_scores(ScoreMap(grid_h=5, grid_w=5, scores=np.zeros((1, 5, 5))), cov)


class TestUpsampleLabels:
    def test_constant_class(self):
        rng = np.random.default_rng(7)
        phi = project_constraints(rng.random((2, 6, 6)))
        cov = quiet_coverage(phi, PixelGrid(32, 32))
        scores = np.zeros((4, 6, 6))
        scores[3] = 1.0
        lab = upsample_labels(ScoreMap(grid_h=6, grid_w=6, scores=scores), cov)
        np.testing.assert_array_equal(lab.labels, 3)

    def test_half_split_boundary_in_middle_strip(self):
        cov = build_coverage(uniform_tensor(8, 8), PixelGrid(64, 64))
        scores = np.zeros((2, 8, 8))
        scores[0, :, :4] = 1.0
        scores[1, :, 4:] = 1.0
        lab = upsample_labels(ScoreMap(grid_h=8, grid_w=8, scores=scores), cov).labels
        # Sample columns 3 and 4 land at x = 27 and 36; the blend crosses 0.5
        # midway, so the decision flips between columns 31 and 32.
        np.testing.assert_array_equal(lab[:, :32], 0)
        np.testing.assert_array_equal(lab[:, 32:], 1)

    def test_score_tie_takes_lowest_class(self):
        cov = build_coverage(uniform_tensor(3, 3), PixelGrid(9, 9))
        scores = np.full((3, 3, 3), 0.5)
        lab = upsample_labels(ScoreMap(grid_h=3, grid_w=3, scores=scores), cov)
        np.testing.assert_array_equal(lab.labels, 0)
