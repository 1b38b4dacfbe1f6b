"""Globally optimal sampling grids from a quadratic boundary-attraction energy.

The energy is a sum of squared distances from each sampling location to its
nearest-boundary coordinate plus a smoothness weight times squared differences
across 4-neighbor pairs (each unordered pair counted once). Subject to the
covering constraints that pin the grid border to the unit square, the two
coordinate channels decouple and each reduces to a symmetric positive-definite
sparse linear system (I + lambda * L) x = rhs with L the grid Laplacian
restricted to free variables.

Because every free value of the solution is a convex combination of data
values and fixed border values, all of which lie in [0, 1], the box constraint
is inactive (discrete maximum principle); the solver checks this and only
clamps floating-point dust.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import NearestBoundaryField

# Direct dense solve is cheaper and exact up to this many unknowns per grid.
_DENSE_CUTOFF = 256
# Tolerance against floating-point drift when verifying the maximum principle.
_BOX_SLACK = 1e-9


class SolverConvergenceError(RuntimeError):
    """Iterative solve failed to reach tolerance; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SamplingTensor:
    """A (2, h, w) array of relative sampling coordinates.

    Channel 0 holds row coordinates, channel 1 column coordinates. The border
    lines are pinned exactly: channel 0 is 0 on the first row and 1 on the
    last, channel 1 is 0 in the first column and 1 in the last, so the convex
    hull of the locations always covers the full image.
    """

    phi: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.phi, dtype=np.float64)
        if p.ndim != 3 or p.shape[0] != 2 or p.shape[1] < 2 or p.shape[2] < 2:
            raise ValueError(f"sampling tensor must be (2, h>=2, w>=2), got {p.shape}")
        if not np.isfinite(p).all():
            raise ValueError("sampling tensor entries must be finite")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("sampling tensor entries must lie in [0, 1]")
        if (p[0, 0, :] != 0.0).any() or (p[0, -1, :] != 1.0).any() \
                or (p[1, :, 0] != 0.0).any() or (p[1, :, -1] != 1.0).any():
            raise ValueError("covering constraints violated on the tensor border")
        object.__setattr__(self, "phi", p)

    @property
    def grid_h(self) -> int:
        return self.phi.shape[1]

    @property
    def grid_w(self) -> int:
        return self.phi.shape[2]

    def points(self) -> np.ndarray:
        """(h*w, 2) sampling locations in row-major vertex order."""
        return self.phi.reshape(2, -1).T


@dataclass(frozen=True)
class EnergyParams:
    """Smoothness weight; math.inf selects the uniform-grid limit."""

    lam: float = 1.0

    def __post_init__(self):
        if math.isnan(self.lam) or self.lam < 0:
            raise ValueError("lambda must be non-negative")


def uniform_tensor(h: int, w: int) -> SamplingTensor:
    """Evenly spaced sampling locations; equivalent to plain nearest-neighbor
    downsampling."""
    if h < 2 or w < 2:
        raise ValueError("sampling tensor must be at least 2x2")
    rows = np.linspace(0.0, 1.0, h)
    cols = np.linspace(0.0, 1.0, w)
    phi = np.empty((2, h, w))
    phi[0] = rows[:, None]
    phi[1] = cols[None, :]
    return SamplingTensor(phi)


def energy(phi: SamplingTensor, b: NearestBoundaryField, params: EnergyParams) -> float:
    """Data term plus lambda times the smoothness term.

    Each unordered 4-neighbor pair contributes once to the smoothness sum.
    """
    if (phi.grid_h, phi.grid_w) != (b.grid_h, b.grid_w):
        raise ValueError(
            f"tensor grid {(phi.grid_h, phi.grid_w)} != field grid {(b.grid_h, b.grid_w)}")
    p = phi.phi
    data = float(((p - b.coords) ** 2).sum())
    smooth = float((np.diff(p, axis=1) ** 2).sum() + (np.diff(p, axis=2) ** 2).sum())
    if math.isinf(params.lam):
        return math.inf if smooth > 0 else data
    return data + params.lam * smooth


def project_constraints(phi_raw: np.ndarray) -> SamplingTensor:
    """Clamp entries into [0, 1] and overwrite the four pinned border lines.

    Idempotent; used to repair tensors produced outside the solver.
    """
    p = np.asarray(phi_raw, dtype=np.float64)
    if p.ndim != 3 or p.shape[0] != 2 or p.shape[1] < 2 or p.shape[2] < 2:
        raise ValueError(f"expected a (2, h>=2, w>=2) array, got {p.shape}")
    if np.isnan(p).any():
        raise ValueError("tensor entries must not be NaN")
    p = np.clip(p, 0.0, 1.0)
    p[0, 0, :] = 0.0
    p[0, -1, :] = 1.0
    p[1, :, 0] = 0.0
    p[1, :, -1] = 1.0
    return SamplingTensor(p)


def _grid_laplacian_system(h: int, w: int, fixed_rows: bool, lam: float,
                           b_chan: np.ndarray, fixed_lo: float, fixed_hi: float):
    """Assemble (I + lam*L) x = rhs over the free variables of one channel.

    fixed_rows selects whether the first/last rows (channel 0) or columns
    (channel 1) carry the Dirichlet values fixed_lo/fixed_hi. Returns the
    sparse matrix, rhs, the free-variable boolean mask, and the full field
    pre-filled with the fixed values.
    """
    free = np.ones((h, w), dtype=bool)
    full = np.empty((h, w))
    full.fill(np.nan)
    if fixed_rows:
        free[0, :] = free[-1, :] = False
        full[0, :] = fixed_lo
        full[-1, :] = fixed_hi
    else:
        free[:, 0] = free[:, -1] = False
        full[:, 0] = fixed_lo
        full[:, -1] = fixed_hi

    n = h * w
    var_id = np.full(n, -1, dtype=np.int64)
    free_flat = free.ravel()
    n_free = int(free_flat.sum())
    var_id[free_flat] = np.arange(n_free)

    # 4-neighbor edges as flat index pairs.
    idx = np.arange(n).reshape(h, w)
    pairs = np.concatenate([
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
    ])

    diag = np.ones(n_free)
    rows_acc = []
    cols_acc = []
    vals_acc = []
    rhs = b_chan.ravel()[free_flat].astype(np.float64).copy()
    fixed_vals = full.ravel()

    a, bb = pairs[:, 0], pairs[:, 1]
    # Both endpoints free: Laplacian off-diagonals plus degree contributions.
    both = free_flat[a] & free_flat[bb]
    va, vb = var_id[a[both]], var_id[bb[both]]
    np.add.at(diag, va, lam)
    np.add.at(diag, vb, lam)
    rows_acc.append(va)
    cols_acc.append(vb)
    vals_acc.append(np.full(va.shape, -lam))
    rows_acc.append(vb)
    cols_acc.append(va)
    vals_acc.append(np.full(va.shape, -lam))
    # One endpoint fixed: degree contribution and rhs load.
    for free_side, fixed_side in ((a, bb), (bb, a)):
        m = free_flat[free_side] & ~free_flat[fixed_side]
        v = var_id[free_side[m]]
        np.add.at(diag, v, lam)
        np.add.at(rhs, v, lam * fixed_vals[fixed_side[m]])

    rows_acc.append(np.arange(n_free))
    cols_acc.append(np.arange(n_free))
    vals_acc.append(diag)
    mat = sp.csr_matrix((np.concatenate(vals_acc),
                         (np.concatenate(rows_acc), np.concatenate(cols_acc))),
                        shape=(n_free, n_free))
    return mat, rhs, free, full


def _solve_channel(h: int, w: int, fixed_rows: bool, lam: float, b_chan: np.ndarray,
                   rtol: float, maxiter: int | None) -> np.ndarray:
    free = np.ones((h, w), dtype=bool)
    if fixed_rows:
        free[0, :] = free[-1, :] = False
    else:
        free[:, 0] = free[:, -1] = False

    if lam == 0.0:
        # The system degenerates to the identity: free locations copy the
        # boundary field exactly.
        full = b_chan.astype(np.float64).copy()
        if fixed_rows:
            full[0, :], full[-1, :] = 0.0, 1.0
        else:
            full[:, 0], full[:, -1] = 0.0, 1.0
        return full

    mat, rhs, free, full = _grid_laplacian_system(h, w, fixed_rows, lam, b_chan, 0.0, 1.0)
    if h * w <= _DENSE_CUTOFF:
        x = np.linalg.solve(mat.toarray(), rhs)
    else:
        if maxiter is None:
            maxiter = 10 * h * w
        precond = sp.diags(1.0 / mat.diagonal())
        # Warm start from the uniform grid, the exact lambda->inf limit.
        if fixed_rows:
            x0_full = np.tile(np.linspace(0.0, 1.0, h)[:, None], (1, w))
        else:
            x0_full = np.tile(np.linspace(0.0, 1.0, w)[None, :], (h, 1))
        x0 = x0_full[free]
        x, info = spla.cg(mat, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=precond)
        if info != 0:
            residual = float(np.abs(mat @ x - rhs).max())
            raise SolverConvergenceError(
                f"CG did not converge within {maxiter} iterations "
                f"(max residual {residual:.3e})", residual)
    full[free] = x
    return full


def solve_sampling_tensor(b: NearestBoundaryField, params: EnergyParams,
                          rtol: float = 1e-12, maxiter: int | None = None) -> SamplingTensor:
    """Unique minimizer of the boundary-attraction energy under the covering
    constraints.

    The two channels decouple and are solved independently: channel 0 pins the
    first/last rows to 0/1, channel 1 pins the first/last columns. Grids up to
    16x16 use a direct dense solve; larger grids use Jacobi-preconditioned
    conjugate gradients. An infinite smoothness weight returns the uniform
    grid exactly.
    """
    if math.isinf(params.lam):
        return uniform_tensor(b.grid_h, b.grid_w)
    h, w = b.grid_h, b.grid_w
    phi = np.empty((2, h, w))
    phi[0] = _solve_channel(h, w, True, params.lam, b.coords[0], rtol, maxiter)
    phi[1] = _solve_channel(h, w, False, params.lam, b.coords[1], rtol, maxiter)
    lo, hi = phi.min(), phi.max()
    if lo < -_BOX_SLACK or hi > 1.0 + _BOX_SLACK:
        raise RuntimeError(
            f"maximum principle violated: solution range [{lo:.3e}, {hi:.3e}]")
    return project_constraints(phi)
