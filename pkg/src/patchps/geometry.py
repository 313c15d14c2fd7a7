"""Triangles, barycentric coordinates, coarse mesh construction and facet frames.

Conventions used throughout the package:

* a 2D triangle is a ``(2, 3)`` array whose columns are the vertices,
* a 3D triangle (mesh facet) is a ``(3, 3)`` array whose columns are the vertices,
* batches of points are ``(2, n)`` / ``(3, n)`` arrays,
* image coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row of
  the pixel array; pixel centers sit at integer coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay

logger = logging.getLogger(__name__)

IMAGE_NORMAL = np.array([0.0, 0.0, 1.0])

# reference-view sliver rejection thresholds
MAX_ASPECT_RATIO = 20.0
MIN_REF_AREA_PX = 4.0


class GeometryError(ValueError):
    """Invalid geometric input (degenerate or inconsistent)."""


class DegenerateTriangleError(GeometryError):
    """Triangle with (near-)zero area where a proper triangle is required."""


def signed_area(vertices2d: np.ndarray) -> float:
    """Signed area of a 2D triangle given as a (2, 3) column matrix."""
    e1 = vertices2d[:, 1] - vertices2d[:, 0]
    e2 = vertices2d[:, 2] - vertices2d[:, 0]
    return 0.5 * (e1[0] * e2[1] - e1[1] * e2[0])


def triangle_area3d(vertices3d: np.ndarray) -> float:
    e1 = vertices3d[:, 1] - vertices3d[:, 0]
    e2 = vertices3d[:, 2] - vertices3d[:, 0]
    return 0.5 * float(np.linalg.norm(np.cross(e1, e2)))


def aspect_ratio(vertices2d: np.ndarray) -> float:
    """Longest edge over the corresponding altitude; ~1.15 for equilateral."""
    edges = np.linalg.norm(np.diff(vertices2d[:, [0, 1, 2, 0]], axis=1), axis=0)
    area = abs(signed_area(vertices2d))
    if area <= 0.0:
        return np.inf
    longest = edges.max()
    return longest * longest / (2.0 * area)


@dataclass(frozen=True)
class Barycentric:
    """Barycentric coordinates of one point w.r.t. a triangle."""

    alpha: float
    beta: float
    gamma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])

    def is_inside(self, tol: float = 1e-12) -> bool:
        return all(-tol <= v <= 1.0 + tol for v in (self.alpha, self.beta, self.gamma))


def barycentric_grid(points2d: np.ndarray, vertices2d: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of (2, n) points w.r.t. a (2, 3) triangle.

    Returns a (3, n) array of (alpha, beta, gamma) summing to 1 per column.
    Raises DegenerateTriangleError for a zero-area triangle.
    """
    v1, v2, v3 = vertices2d.T
    m = np.column_stack([v1 - v3, v2 - v3])
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    scale = max(np.abs(vertices2d).max(), 1.0)
    if not np.isfinite(det) or abs(det) <= 1e-14 * scale * scale:
        raise DegenerateTriangleError("zero-area triangle in barycentric computation")
    inv = np.array([[m[1, 1], -m[0, 1]], [-m[1, 0], m[0, 0]]]) / det
    ab = inv @ (np.atleast_2d(points2d.T).T - v3[:, None])
    return np.vstack([ab, 1.0 - ab.sum(axis=0)])


def barycentric_of(point2d: np.ndarray, vertices2d: np.ndarray) -> Barycentric:
    """Barycentric coordinates of a single 2D point."""
    lam = barycentric_grid(np.asarray(point2d, dtype=float).reshape(2, 1), vertices2d)
    return Barycentric(float(lam[0, 0]), float(lam[1, 0]), float(lam[2, 0]))


def barycentric_of_3d(points3d: np.ndarray, vertices3d: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of (3, n) points w.r.t. a 3D facet.

    Points are first projected onto the facet plane; coordinates are computed
    in an in-plane orthonormal basis.
    """
    origin = vertices3d[:, 0]
    e1 = vertices3d[:, 1] - origin
    e2 = vertices3d[:, 2] - origin
    u = e1 / np.linalg.norm(e1)
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n)
    if nn <= 1e-14 * max(np.linalg.norm(e1), np.linalg.norm(e2)) ** 2:
        raise DegenerateTriangleError("zero-area 3D facet")
    v = np.cross(n / nn, u)
    basis = np.vstack([u, v])  # (2, 3)
    verts2d = basis @ (vertices3d - origin[:, None])
    pts2d = basis @ (np.atleast_2d(points3d.T).T - origin[:, None])
    return barycentric_grid(pts2d, verts2d)


def enlarge_triangle(vertices: np.ndarray, factor: float) -> np.ndarray:
    """Scale a triangle about its centroid; edges stay parallel to the input.

    Works for (2, 3) image triangles and (3, 3) facets alike. Pipeline use
    passes factors >= 1; shrink factors in (0, 1) are accepted so the
    operation stays invertible.
    """
    if factor <= 0.0:
        raise GeometryError(f"enlargement factor must be positive, got {factor}")
    verts = np.asarray(vertices, dtype=float)
    if verts.shape[0] == 2 and abs(signed_area(verts)) <= 1e-14:
        raise DegenerateTriangleError("cannot enlarge a degenerate triangle")
    if verts.shape[0] == 3 and triangle_area3d(verts) <= 1e-14:
        raise DegenerateTriangleError("cannot enlarge a degenerate facet")
    centroid = verts.mean(axis=1, keepdims=True)
    return centroid + factor * (verts - centroid)


def rotation_to_image_normal(facet_normal: np.ndarray, edge_dir: np.ndarray) -> np.ndarray:
    """Minimal rotation mapping a unit facet normal onto [0, 0, 1].

    For a normal opposite to the image normal the rotation is by pi about the
    provided (first-edge) direction.
    """
    n = np.asarray(facet_normal, dtype=float)
    c = float(n @ IMAGE_NORMAL)
    raw_axis = np.cross(n, IMAGE_NORMAL)
    s = float(np.linalg.norm(raw_axis))
    if s <= 1e-12:
        # parallel within rounding: identity, or an exact pi flip about the
        # (in-plane) first edge for the antipodal case
        if c > 0.0:
            return np.eye(3)
        axis = np.asarray(edge_dir, dtype=float)
        axis = axis / np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    if c < -0.999:
        # near-antipodal: flip by pi about the first edge, then close the
        # small remaining angle with the well-conditioned branch below
        axis = np.asarray(edge_dir, dtype=float)
        axis = axis / np.linalg.norm(axis)
        flip = 2.0 * np.outer(axis, axis) - np.eye(3)
        residual = rotation_to_image_normal(flip @ n, edge_dir)
        return residual @ flip
    axis = raw_axis / s
    k = np.array([
        [0.0, -axis[2], axis[1]],
        [axis[2], 0.0, -axis[0]],
        [-axis[1], axis[0], 0.0],
    ])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


@dataclass(frozen=True)
class FacetFrame:
    """Fronto-parallel frame of one mesh facet.

    ``rotation`` maps the facet normal onto the image normal [0, 0, 1];
    ``template2d`` holds the first two rows of ``rotation @ vertices3d``.
    """

    rotation: np.ndarray
    facet_normal: np.ndarray
    template2d: np.ndarray

    @property
    def image_normal(self) -> np.ndarray:
        return IMAGE_NORMAL.copy()


def facet_normal_of(vertices3d: np.ndarray) -> np.ndarray:
    """Unit normal of a facet following the vertex winding."""
    e1 = vertices3d[:, 1] - vertices3d[:, 0]
    e2 = vertices3d[:, 2] - vertices3d[:, 0]
    n = np.cross(e1, e2)
    nn = np.linalg.norm(n)
    if nn <= 1e-14 * max(np.linalg.norm(e1) * np.linalg.norm(e2), 1e-300):
        raise DegenerateTriangleError("degenerate facet has no normal")
    return n / nn


def facet_frame(vertices3d: np.ndarray) -> FacetFrame:
    """Build the fronto-parallel template frame of a 3D facet."""
    verts = np.asarray(vertices3d, dtype=float)
    normal = facet_normal_of(verts)
    edge = verts[:, 1] - verts[:, 0]
    rot = rotation_to_image_normal(normal, edge / np.linalg.norm(edge))
    template = (rot @ verts)[:2]
    return FacetFrame(rotation=rot, facet_normal=normal, template2d=template)


@dataclass(frozen=True)
class CoarseMesh:
    """Sparse 3D vertices, triangle index set and per-view 2D projections."""

    vertices3d: np.ndarray          # (p, 3)
    triangles: np.ndarray           # (m, 3) int, 0-based
    projections: np.ndarray         # (f, p, 2), NaN for untracked
    reference_view: int
    dropped_triangles: np.ndarray = field(default_factory=lambda: np.empty((0, 3), dtype=int))

    @property
    def point_count(self) -> int:
        return self.vertices3d.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    @property
    def frame_count(self) -> int:
        return self.projections.shape[0]

    def triangle_vertices3d(self, tri: int) -> np.ndarray:
        """(3, 3) column matrix of the facet's 3D vertices."""
        return self.vertices3d[self.triangles[tri]].T

    def triangle_projection(self, view: int, tri: int) -> np.ndarray:
        """(2, 3) column matrix of the facet's projection in one view."""
        return self.projections[view, self.triangles[tri]].T

    def shared_edge_pairs(self) -> list[tuple[int, int]]:
        """Pairs of triangle indices sharing an edge, sorted."""
        edge_owner: dict[tuple[int, int], int] = {}
        pairs = set()
        for t, tri in enumerate(self.triangles):
            for a, b in ((0, 1), (1, 2), (2, 0)):
                key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
                if key in edge_owner:
                    pairs.add((min(edge_owner[key], t), max(edge_owner[key], t)))
                else:
                    edge_owner[key] = t
        return sorted(pairs)


def build_mesh(
    points3d: np.ndarray,
    projections: np.ndarray,
    reference_view: int | None = None,
    drop_slivers: bool = True,
) -> CoarseMesh:
    """Delaunay-triangulate the reference-view projections and apply the same
    index triples to the 3D points.

    ``reference_view`` defaults to the middle frame. Cocircular ties are made
    deterministic by triangulating the lexicographically sorted point set and
    mapping indices back. Triangle windings are normalized to positive signed
    area in the reference view. Slivers (aspect ratio > 20 or reference-view
    area < 4 px^2) are dropped with a warning.
    """
    pts = np.asarray(points3d, dtype=float)
    proj = np.asarray(projections, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise GeometryError(f"points3d must be (p, 3), got {pts.shape}")
    if proj.ndim != 3 or proj.shape[1] != pts.shape[0] or proj.shape[2] != 2:
        raise GeometryError(f"projections must be (f, p, 2), got {proj.shape}")
    p = pts.shape[0]
    f = proj.shape[0]
    if p < 3:
        raise GeometryError("need at least 3 points to triangulate")
    if reference_view is None:
        reference_view = f // 2
    if not 0 <= reference_view < f:
        raise GeometryError(f"reference view {reference_view} out of range [0, {f})")

    ref = proj[reference_view]
    if not np.isfinite(ref).all():
        raise GeometryError("reference-view projections must be fully tracked (no NaN)")
    # duplicate 2D points make the triangulation ill-defined
    order = np.lexsort((ref[:, 1], ref[:, 0]))
    sorted_ref = ref[order]
    dup = np.all(np.diff(sorted_ref, axis=0) == 0.0, axis=1)
    if dup.any():
        raise GeometryError("duplicate 2D points in the reference view")

    try:
        delaunay = Delaunay(sorted_ref)
    except Exception as exc:  # qhull reports collinear input this way
        raise GeometryError(f"Delaunay triangulation failed: {exc}") from exc
    if delaunay.simplices.size == 0:
        raise GeometryError("reference-view projections are collinear")

    tris = order[delaunay.simplices]  # back to original indices
    # normalize winding to negative signed area in the reference view: under
    # the standard pinhole convention (x right, y down, z forward) this makes
    # the 3D facet normals face the reference camera
    keep = []
    dropped = []
    for tri in tris:
        verts = ref[tri].T
        if signed_area(verts) > 0.0:
            tri = tri[[0, 2, 1]]
            verts = ref[tri].T
        area = abs(signed_area(verts))
        if drop_slivers and (area < MIN_REF_AREA_PX or aspect_ratio(verts) > MAX_ASPECT_RATIO):
            dropped.append(tri)
            continue
        if area <= 0.0:
            dropped.append(tri)
            continue
        keep.append(tri)
    if dropped:
        logger.warning(
            "dropped %d sliver/degenerate triangle(s) out of %d", len(dropped), len(tris)
        )
    if not keep:
        raise GeometryError("no usable triangles after sliver rejection")

    triangles = np.array(sorted(map(tuple, keep)), dtype=int)
    dropped_arr = (
        np.array(sorted(map(tuple, dropped)), dtype=int)
        if dropped
        else np.empty((0, 3), dtype=int)
    )
    return CoarseMesh(
        vertices3d=pts.copy(),
        triangles=triangles,
        projections=proj.copy(),
        reference_view=int(reference_view),
        dropped_triangles=dropped_arr,
    )
