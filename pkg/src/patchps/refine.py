"""Superposition of corrected patches and variational refinement.

The assembled point set is splatted into a reference-view grid (one 3D value
per reference pixel of the projected mesh region). The refined surface
minimizes

    sum_cells lam * (1 - G) ||raw - S||^2 + G ||grad S||^2

with forward-difference gradients. G is the barycentric spread weight, zero
at triangle centroids and maximal at vertices, so data fidelity dominates at
patch centers and smoothing dominates near the seams.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .align import FacetPointSet
from .geometry import CoarseMesh, barycentric_grid, barycentric_of_3d
from .decompose import rasterize_mask

logger = logging.getLogger(__name__)


class RefinementDivergedError(RuntimeError):
    """The conjugate-direction solve increased the energy beyond slack."""


def weight_of(point3d: np.ndarray, triangle_vertices3d: np.ndarray) -> float:
    """Barycentric spread weight of a point attributed to a facet."""
    lam = barycentric_of_3d(np.asarray(point3d, dtype=float).reshape(3, 1),
                            np.asarray(triangle_vertices3d, dtype=float))
    return weight_from_barycentric(lam)[0]


def weight_from_barycentric(lam: np.ndarray) -> np.ndarray:
    """G = 1/2 sqrt(|a-b| + |a-c| + |c-b|) for (3, n) barycentrics."""
    a, b, c = lam
    return 0.5 * np.sqrt(np.abs(a - b) + np.abs(a - c) + np.abs(c - b))


@dataclass(frozen=True)
class RawSurface:
    """Superposed patch points with per-point provenance."""

    points: np.ndarray             # (n, 3)
    triangle_ids: np.ndarray       # (n,)
    template_pixels: np.ndarray    # (n,) template raster index within the patch
    barycentric: np.ndarray        # (3, n) w.r.t. the owning un-enlarged facet

    @property
    def point_count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class DenseSurface:
    """Refined surface on the reference-view grid."""

    points: np.ndarray             # (n, 3)
    triangle_ids: np.ndarray       # (n,) provenance triangle per grid cell
    source_pixels: np.ndarray      # (n,) representative template pixel, -1 if splat-free
    energy: float
    energy_history: np.ndarray
    grid_shape: tuple[int, int]
    grid_cells: np.ndarray         # (n,) flat indices of the cells in the grid
    grid_origin: np.ndarray        # (2,) reference-view pixel coords of cell (0, 0)

    @property
    def point_count(self) -> int:
        return self.points.shape[0]


def superpose(
    corrected: dict[int, FacetPointSet] | list[FacetPointSet],
    pairings: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] | None = None,
) -> RawSurface:
    """Concatenate corrected patches; matched overlap duplicates are merged
    (averaged) into single points."""
    if isinstance(corrected, dict):
        sets = [corrected[k] for k in sorted(corrected)]
    else:
        sets = list(corrected)
    if not sets:
        raise ValueError("no patches to superpose")
    offsets = {}
    total = 0
    for fps in sets:
        offsets[fps.triangle_id] = total
        total += fps.point_count
    points = np.concatenate([fps.points().T for fps in sets], axis=0)
    tri_ids = np.concatenate([np.full(fps.point_count, fps.triangle_id) for fps in sets])
    tpl_pix = np.concatenate([np.arange(fps.point_count) for fps in sets])
    bary = np.concatenate([fps.base_barycentric for fps in sets], axis=1)

    parent = np.arange(total)

    def find(x):
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    if pairings:
        for (ta, tb), (ii, jj) in pairings.items():
            if ta not in offsets or tb not in offsets:
                continue
            for i, j in zip(ii, jj):
                ra, rb = find(offsets[ta] + i), find(offsets[tb] + j)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    roots = np.array([find(i) for i in range(total)])
    uniq, inverse, counts = np.unique(roots, return_inverse=True, return_counts=True)
    merged = np.zeros((uniq.size, 3))
    np.add.at(merged, inverse, points)
    merged /= counts[:, None]
    return RawSurface(
        points=merged,
        triangle_ids=tri_ids[uniq],
        template_pixels=tpl_pix[uniq],
        barycentric=bary[:, uniq],
    )


def _reference_grid(mesh: CoarseMesh):
    """Rasterize the un-enlarged projected mesh in the reference view.

    Returns (origin, shape, cell_tri, cell_bary) where cell_tri maps every
    in-region cell to its triangle (first triangle wins on shared edges).
    """
    ref = mesh.projections[mesh.reference_view]
    lo = np.floor(ref.min(axis=0)).astype(int) - 1
    hi = np.ceil(ref.max(axis=0)).astype(int) + 1
    shape = (int(hi[1] - lo[1] + 1), int(hi[0] - lo[0] + 1))
    cell_tri = np.full(shape, -1, dtype=int)
    for t in range(mesh.triangle_count):
        verts = mesh.triangle_projection(mesh.reference_view, t) - lo[:, None]
        pm = rasterize_mask(verts, shape, triangle_id=t)
        fresh = pm.mask.astype(bool) & (cell_tri < 0)
        cell_tri[fresh] = t
    cells = np.flatnonzero(cell_tri.ravel() >= 0)
    rows, cols = np.divmod(cells, shape[1])
    centers = np.vstack([cols, rows]).astype(float) + lo[:, None]
    bary = np.zeros((3, cells.size))
    for t in np.unique(cell_tri.ravel()[cells]):
        sel = cell_tri.ravel()[cells] == t
        verts = mesh.triangle_projection(mesh.reference_view, t)
        bary[:, sel] = barycentric_grid(centers[:, sel], verts)
    return lo.astype(float), shape, cell_tri, cells, bary


def _cg_multi(A, b, x0, tol, max_iters, energy_fn):
    """Conjugate gradients with an (n, k) right-hand side and energy trace."""
    x = x0.copy()
    r = b - A @ x
    p = r.copy()
    rs = float(np.sum(r * r))
    b_norm = max(float(np.sum(b * b)), 1e-300)
    history = [energy_fn(x)]
    for _ in range(max_iters):
        Ap = A @ p
        denom = float(np.sum(p * Ap))
        if denom <= 0:
            break
        alpha = rs / denom
        x = x + alpha * p
        history.append(energy_fn(x))
        r = r - alpha * Ap
        rs_new = float(np.sum(r * r))
        if np.sqrt(rs_new / b_norm) < tol:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, history


def refine(
    raw: RawSurface,
    mesh: CoarseMesh,
    lam: float = 10.0,
    tol: float = 1e-8,
    max_iters: int = 500,
    g_override: float | None = None,
) -> DenseSurface:
    """Variational refinement of the superposed surface on the reference grid.

    ``g_override`` replaces the barycentric weight with a constant (useful for
    the pure data-term limit G = 0). Raises RefinementDivergedError when the
    energy trace increases beyond slack.
    """
    if raw.point_count == 0:
        raise ValueError("empty raw surface")
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")

    origin, shape, cell_tri, cells, cell_bary = _reference_grid(mesh)
    n = cells.size
    cell_index = -np.ones(shape[0] * shape[1], dtype=int)
    cell_index[cells] = np.arange(n)

    if g_override is not None:
        g_cell = np.full(n, float(g_override))
        g_point = np.full(raw.point_count, float(g_override))
    else:
        g_cell = weight_from_barycentric(cell_bary)
        g_point = weight_from_barycentric(raw.barycentric)

    # splat: each raw point lands in the nearest reference cell through its
    # facet's barycentric transfer
    ref = mesh.projections[mesh.reference_view]
    pos = np.zeros((2, raw.point_count))
    for t in np.unique(raw.triangle_ids):
        sel = raw.triangle_ids == t
        verts = ref[mesh.triangles[t]].T
        pos[:, sel] = verts @ raw.barycentric[:, sel]
    col = np.rint(pos[0] - origin[0]).astype(int)
    row = np.rint(pos[1] - origin[1]).astype(int)
    ok = (row >= 0) & (row < shape[0]) & (col >= 0) & (col < shape[1])
    flat = row * shape[1] + col
    ok &= np.where(ok, cell_index[np.where(ok, flat, 0)] >= 0, False)
    dropped = int((~ok).sum())
    if dropped:
        logger.debug("refine: %d raw points fell outside the grid", dropped)

    w_pt = 1.0 - g_point
    idx = cell_index[flat[ok]]
    w_cell = np.zeros(n)
    target = np.zeros((n, 3))
    np.add.at(w_cell, idx, w_pt[ok])
    np.add.at(target, idx, w_pt[ok, None] * raw.points[ok])
    has_data = w_cell > 1e-14
    target[has_data] /= w_cell[has_data, None]

    # representative provenance: heaviest contributing point per cell
    source_pixel = np.full(n, -1, dtype=int)
    best_w = np.zeros(n)
    ok_idx = np.flatnonzero(ok)
    for k in ok_idx:
        c = cell_index[flat[k]]
        if w_pt[k] >= best_w[c]:
            best_w[c] = w_pt[k]
            source_pixel[c] = raw.template_pixels[k]

    # smoothness: forward differences between in-domain neighbor cells,
    # weighted by the source cell's G
    rows_g, cols_g = np.divmod(cells, shape[1])
    pairs_i, pairs_j, pairs_w = [], [], []
    for dr, dc in ((0, 1), (1, 0)):
        rr, cc = rows_g + dr, cols_g + dc
        valid = (rr < shape[0]) & (cc < shape[1])
        nb = np.where(valid, cell_index[np.minimum(rr * shape[1] + cc,
                                                   shape[0] * shape[1] - 1)], -1)
        valid &= nb >= 0
        pairs_i.append(np.arange(n)[valid])
        pairs_j.append(nb[valid])
        pairs_w.append(g_cell[valid])
    pi = np.concatenate(pairs_i)
    pj = np.concatenate(pairs_j)
    pw = np.concatenate(pairs_w)

    inc = sp.csr_matrix(
        (np.concatenate([np.ones(pi.size), -np.ones(pi.size)]),
         (np.concatenate([np.arange(pi.size), np.arange(pi.size)]),
          np.concatenate([pj, pi]))),
        shape=(pi.size, n),
    )
    lap = (inc.T @ sp.diags(pw) @ inc).tocsr()
    diag_data = lam * w_cell
    A = lap + sp.diags(diag_data)
    # keep fully unconstrained cells (no data, no neighbors) well-posed
    lonely = np.asarray(A.diagonal() <= 1e-14).ravel()
    if lonely.any():
        A = A + sp.diags(np.where(lonely, 1.0, 0.0))
    b = lam * w_cell[:, None] * target

    def energy_fn(x):
        data = lam * float(np.sum(w_cell[:, None] * (x - target) ** 2 * has_data[:, None]))
        grad = inc @ x
        smooth = float(np.sum(pw[:, None] * grad ** 2))
        return data + smooth

    x0 = target.copy()
    x, history = _cg_multi(A, b, x0, tol, max_iters, energy_fn)
    hist = np.asarray(history)
    if np.any(np.diff(hist) > 1e-12 * np.maximum(np.abs(hist[:-1]), 1.0)):
        raise RefinementDivergedError("energy increased during refinement")

    # faithful final energy: per-point data term plus weighted gradient term
    data_e = lam * float(np.sum(w_pt[ok] * np.sum(
        (raw.points[ok] - x[cell_index[flat[ok]]]) ** 2, axis=1)))
    grad = inc @ x
    energy = data_e + float(np.sum(pw[:, None] * grad ** 2))

    return DenseSurface(
        points=x,
        triangle_ids=cell_tri.ravel()[cells],
        source_pixels=source_pixel,
        energy=energy,
        energy_history=hist,
        grid_shape=shape,
        grid_cells=cells,
        grid_origin=origin,
    )
