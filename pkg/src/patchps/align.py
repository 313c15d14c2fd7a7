"""Mapping height fields back onto mesh facets and solving the overlap system.

Each patch contributes points P + N_f * (h . s) where P is the template pixel
transferred barycentrically onto the facet plane, N_f the facet normal, s the
template-frame surface point (x, y, z) and h a per-patch 3-vector correction.
Only this 3-dimensional slice of the paper-style 3x3 correction matrix is
observable in the overlap equations, so h is the unknown. Matched points in
the overlap bands of adjacent enlarged patches must coincide, which yields a
sparse least-squares problem; per connected component the best-observed patch
is pinned to the identity correction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .geometry import CoarseMesh, FacetFrame, barycentric_grid, barycentric_of_3d
from .integration import HeightField

logger = logging.getLogger(__name__)

IDENTITY_H = np.array([0.0, 0.0, 1.0])

TIKHONOV_DAMPING = 1e-3


@dataclass(frozen=True)
class FacetPointSet:
    """Template pixels of one patch mapped onto its mesh facet."""

    base_points: np.ndarray        # (3, b) points on the facet plane (world)
    elevations: np.ndarray         # (b,) offsets along the facet normal
    template_points: np.ndarray    # (3, b) template-frame (x, y, z) per pixel
    normal: np.ndarray             # facet unit normal
    triangle_id: int
    vertex_ids: np.ndarray         # the facet's 3 mesh vertex indices
    base_barycentric: np.ndarray   # (3, b) w.r.t. the un-enlarged facet
    pitch: float

    @property
    def point_count(self) -> int:
        return int(self.elevations.size)

    def points(self) -> np.ndarray:
        """(3, b) world-space surface points."""
        return self.base_points + self.normal[:, None] * self.elevations


@dataclass(frozen=True)
class PatchCorrection:
    """Per-patch elevation remix: identity rows plus the solved third row."""

    transform: np.ndarray          # 3x3, third row carries the correction
    curvature: float

    @property
    def h(self) -> np.ndarray:
        return self.transform[2]


def make_correction(h: np.ndarray, curvature: float) -> PatchCorrection:
    m = np.eye(3)
    m[2] = h
    return PatchCorrection(transform=m, curvature=float(curvature))


@dataclass
class AlignmentReport:
    """Pre/post gap statistics of the overlap solve."""

    pre_rms: float
    post_rms: float
    edge_stats: list[tuple[int, int, float, float]] = field(default_factory=list)
    components: int = 1
    pinned: list[int] = field(default_factory=list)
    k_value: float = 0.0


def anchor_to_corners(height_field: HeightField, corners_xy: np.ndarray) -> HeightField:
    """Re-gauge a height field so elevation vanishes at the facet corners.

    Subtracts the plane through the sampled corner elevations; mesh vertices
    are true surface points, so the anchored patch passes through them. The
    subtraction stays inside the per-patch ambiguity family the overlap solve
    operates in.
    """
    corners = np.asarray(corners_xy, dtype=float)
    z_c = height_field.sample(corners)
    design = np.vstack([corners, np.ones(3)]).T
    coeff = np.linalg.solve(design, z_c)
    rows, cols = height_field.shape
    xs = height_field.origin[0] + height_field.pitch * np.arange(cols)
    ys = height_field.origin[1] + height_field.pitch * np.arange(rows)
    plane = coeff[0] * xs[None, :] + coeff[1] * ys[:, None] + coeff[2]
    return HeightField(
        z_grid=height_field.z_grid - plane,
        pixel_index_set=height_field.pixel_index_set,
        origin=height_field.origin,
        pitch=height_field.pitch,
        triangle_id=height_field.triangle_id,
        clamped_fraction=height_field.clamped_fraction,
    )


def lift_to_facet(
    height_field: HeightField,
    frame: FacetFrame,
    facet_vertices3d: np.ndarray,
    base_vertices3d: np.ndarray | None = None,
    vertex_ids: np.ndarray | None = None,
) -> FacetPointSet:
    """Transfer template pixels onto the (enlarged) 3D facet plane.

    The template raster coordinates are moved through barycentric transfer,
    which inverts the template rotation exactly on the facet plane; the
    integrated z values ride along as elevations over the plane.
    """
    facet = np.asarray(facet_vertices3d, dtype=float)
    tpl = height_field.points()
    lam = barycentric_grid(tpl[:2], frame.template2d)
    base_points = facet @ lam
    if base_vertices3d is None:
        base_vertices3d = facet
    base_bary = barycentric_of_3d(base_points, np.asarray(base_vertices3d, dtype=float))
    return FacetPointSet(
        base_points=base_points,
        elevations=tpl[2].copy(),
        template_points=tpl,
        normal=frame.facet_normal.copy(),
        triangle_id=height_field.triangle_id,
        vertex_ids=(np.asarray(vertex_ids, dtype=int)
                    if vertex_ids is not None else np.full(3, -1)),
        base_barycentric=base_bary,
        pitch=height_field.pitch,
    )


def overlap_correspondences(
    a: FacetPointSet,
    b: FacetPointSet,
    r_pair: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Mutual nearest neighbors between the two patches' facet-plane points.

    The patches must share a mesh edge (two common vertex ids). With no
    enlargement the bands are empty; that case is flagged and returns empty
    index arrays.
    """
    shared = np.intersect1d(a.vertex_ids, b.vertex_ids)
    if shared.size < 2 or a.triangle_id == b.triangle_id:
        raise ValueError(
            f"triangles {a.triangle_id} and {b.triangle_id} do not share an edge"
        )
    if r_pair is None:
        r_pair = 1.5 * max(a.pitch, b.pitch)
    if a.point_count == 0 or b.point_count == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    tree_a = cKDTree(a.base_points.T)
    tree_b = cKDTree(b.base_points.T)
    d_ab, j_ab = tree_b.query(a.base_points.T, distance_upper_bound=r_pair)
    d_ba, j_ba = tree_a.query(b.base_points.T, distance_upper_bound=r_pair)
    ii = np.flatnonzero(np.isfinite(d_ab))
    jj = j_ab[ii]
    mutual = j_ba[jj] == ii
    ii, jj = ii[mutual], jj[mutual]
    # the band exists only where the enlarged patches actually overhang the
    # shared edge: at least one endpoint must have crossed it (negative
    # barycentric weight at the opposite vertex); with no enlargement no
    # point crosses and the pairing is empty
    if ii.size:
        opp_a = int(np.flatnonzero(~np.isin(a.vertex_ids, shared))[0])
        opp_b = int(np.flatnonzero(~np.isin(b.vertex_ids, shared))[0])
        crossed = (a.base_barycentric[opp_a, ii] < -1e-9) | (
            b.base_barycentric[opp_b, jj] < -1e-9)
        ii, jj = ii[crossed], jj[crossed]
    if ii.size == 0:
        logger.debug(
            "empty overlap band between triangles %d and %d", a.triangle_id, b.triangle_id
        )
    return ii, jj


def patch_curvature(height_field: HeightField) -> float:
    """Mean absolute discrete Laplacian over interior patch pixels."""
    rows, cols = height_field.shape
    mask = np.zeros(rows * cols, dtype=bool)
    mask[height_field.pixel_index_set] = True
    mask = mask.reshape(rows, cols)
    interior = mask.copy()
    interior[[0, -1], :] = False
    interior[:, [0, -1]] = False
    interior[1:-1, 1:-1] &= (mask[:-2, 1:-1] & mask[2:, 1:-1]
                             & mask[1:-1, :-2] & mask[1:-1, 2:])
    if interior.sum() == 0:
        logger.debug("triangle %d: support too small for curvature", height_field.triangle_id)
        return 0.0
    z = height_field.z_grid
    lap = np.zeros_like(z)
    lap[1:-1, 1:-1] = (z[:-2, 1:-1] + z[2:, 1:-1] + z[1:-1, :-2] + z[1:-1, 2:]
                       - 4.0 * z[1:-1, 1:-1]) / height_field.pitch ** 2
    return float(np.abs(lap[interior]).mean())


def apply_correction(fps: FacetPointSet, correction: PatchCorrection) -> FacetPointSet:
    """Remix a patch's elevations: e' = h . (x, y, z) per template point."""
    new_elev = correction.h @ fps.template_points
    return FacetPointSet(
        base_points=fps.base_points,
        elevations=new_elev,
        template_points=fps.template_points,
        normal=fps.normal,
        triangle_id=fps.triangle_id,
        vertex_ids=fps.vertex_ids,
        base_barycentric=fps.base_barycentric,
        pitch=fps.pitch,
    )


def _gap_rms(sets, pairings, corrections=None):
    total, count = 0.0, 0
    for (ta, tb), (ii, jj) in pairings.items():
        if ii.size == 0:
            continue
        a, b = sets[ta], sets[tb]
        if corrections is not None:
            a = apply_correction(a, corrections[ta])
            b = apply_correction(b, corrections[tb])
        gap = a.points()[:, ii] - b.points()[:, jj]
        total += float(np.sum(gap ** 2))
        count += ii.size
    return np.sqrt(total / count) if count else 0.0


def _connected_components(tri_ids, edges):
    parent = {t: t for t in tri_ids}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    groups: dict[int, list[int]] = {}
    for t in tri_ids:
        groups.setdefault(find(t), []).append(t)
    return list(groups.values())


def solve_corrections(
    sets: dict[int, FacetPointSet],
    mesh: CoarseMesh,
    curvatures: dict[int, float],
    r_pair: float | None = None,
    variant: str = "tikhonov",
    pairings: dict | None = None,
    damping: float = TIKHONOV_DAMPING,
) -> tuple[dict[int, PatchCorrection], AlignmentReport]:
    """Solve the sparse overlap least-squares for all patch corrections.

    ``variant`` selects how the anti-flattening constant k = 1 / sum(C + C')
    enters: "tikhonov" (default) adds k-weighted rows pulling each h to the
    identity, "additive" adds k inside every overlap residual as written.
    ``damping`` scales the pull; the small default regularizes without biasing
    well-observed corrections. Disconnected meshes are solved per component,
    each with its own pin.
    """
    tri_ids = sorted(sets)
    if pairings is None:
        pairings = {}
        for ta, tb in mesh.shared_edge_pairs():
            if ta in sets and tb in sets:
                pairings[(ta, tb)] = overlap_correspondences(sets[ta], sets[tb], r_pair)
    edges_with_overlap = [e for e, (ii, _) in pairings.items() if ii.size > 0]

    k_den = sum(curvatures.get(a, 0.0) + curvatures.get(b, 0.0)
                for a, b in edges_with_overlap)
    k_value = 1.0 / k_den if k_den > 1e-12 else 1.0

    components = _connected_components(tri_ids, edges_with_overlap)
    pinned: list[int] = []
    h_sol = {t: IDENTITY_H.copy() for t in tri_ids}

    for comp in components:
        comp = sorted(comp)
        pin = max(comp, key=lambda t: (sets[t].point_count, -t))
        pinned.append(pin)
        free = [t for t in comp if t != pin]
        if not free:
            continue
        col_of = {t: 3 * k for k, t in enumerate(free)}
        rows_i, cols_j, vals, rhs = [], [], [], []
        eq = 0

        def add_rows(coeff_rows, tri, s_point, sign):
            # residual rows gain sign * N (h . s) for a free patch
            base = col_of[tri]
            for r in range(3):
                n_r = sign * sets[tri].normal[r]
                for c in range(3):
                    rows_i.append(coeff_rows + r)
                    cols_j.append(base + c)
                    vals.append(n_r * s_point[c])

        comp_edges = [e for e in edges_with_overlap if e[0] in comp and e[1] in comp]
        for (ta, tb) in comp_edges:
            ii, jj = pairings[(ta, tb)]
            a, b = sets[ta], sets[tb]
            pa = a.base_points[:, ii]
            pb = b.base_points[:, jj]
            sa = a.template_points[:, ii]
            sb = b.template_points[:, jj]
            for m in range(ii.size):
                r0 = eq
                const = pa[:, m] - pb[:, m]
                if ta in col_of:
                    add_rows(r0, ta, sa[:, m], +1.0)
                else:
                    const = const + a.normal * (IDENTITY_H @ sa[:, m])
                if tb in col_of:
                    add_rows(r0, tb, sb[:, m], -1.0)
                else:
                    const = const - b.normal * (IDENTITY_H @ sb[:, m])
                shift = k_value if variant == "additive" else 0.0
                rhs.extend([-c - shift for c in const])
                eq += 3

        if variant == "tikhonov":
            # k-scaled pull toward the identity correction; damped so it
            # regularizes rank-deficient overlap systems without fighting
            # real flip/scale signal in the data rows
            for t in free:
                scale = np.sqrt(np.maximum(
                    np.mean(sets[t].template_points ** 2, axis=1), 1e-30))
                w = np.sqrt(k_value) * damping
                for c in range(3):
                    rows_i.append(eq)
                    cols_j.append(col_of[t] + c)
                    vals.append(w * scale[c])
                    rhs.append(w * scale[c] * IDENTITY_H[c])
                    eq += 1

        if eq == 0:
            continue
        A = sp.csr_matrix((vals, (rows_i, cols_j)), shape=(eq, 3 * len(free)))
        rhs_arr = np.asarray(rhs)
        normal = (A.T @ A).tocsc()
        try:
            solution = spla.spsolve(normal, A.T @ rhs_arr)
        except Exception:
            solution = spla.lsqr(A, rhs_arr, atol=1e-13, btol=1e-13)[0]
        if not np.isfinite(solution).all():
            logger.warning("singular overlap system; falling back to lsqr")
            solution = spla.lsqr(A, rhs_arr, atol=1e-13, btol=1e-13)[0]
        for t in free:
            h_sol[t] = solution[col_of[t]:col_of[t] + 3]

    corrections = {
        t: make_correction(h_sol[t], curvatures.get(t, 0.0)) for t in tri_ids
    }
    pre = _gap_rms(sets, pairings)
    post = _gap_rms(sets, pairings, corrections)
    edge_stats = []
    for (ta, tb), (ii, jj) in sorted(pairings.items()):
        if ii.size == 0:
            continue
        single = {(ta, tb): (ii, jj)}
        edge_stats.append((ta, tb, _gap_rms(sets, single), _gap_rms(sets, single, corrections)))
    report = AlignmentReport(
        pre_rms=pre,
        post_rms=post,
        edge_stats=edge_stats,
        components=len(components),
        pinned=sorted(pinned),
        k_value=k_value,
    )
    logger.info(
        "alignment: %d patches, %d overlap edges, gap rms %.3e -> %.3e",
        len(tri_ids), len(edges_with_overlap), pre, post,
    )
    return corrections, report
