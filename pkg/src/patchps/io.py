"""File formats: images, the sparse-point table, exports and reports.

Sparse-point file (plain text, '#' comments allowed)::

    points <p>
    x y z                 # p rows
    frames <f>
    u v                   # f blocks of p rows, 'nan nan' for untracked

Surfaces are exported as ASCII PLY point clouds and OBJ meshes; the error
heatmap is a PNG over the reference-view grid.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import imageio.v3 as iio
import numpy as np

from .decompose import to_grayscale

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# images
# --------------------------------------------------------------------------

def load_image(path: str | Path) -> np.ndarray:
    """Load an 8/16-bit gray or RGB raster image, normalized to [0, 1] gray."""
    raw = iio.imread(path)
    arr = np.asarray(raw)
    if arr.dtype == np.uint8:
        arr = arr.astype(float) / 255.0
    elif arr.dtype == np.uint16:
        arr = arr.astype(float) / 65535.0
    else:
        arr = arr.astype(float)
        if arr.max() > 1.0:
            arr = arr / arr.max()
    return np.clip(to_grayscale(arr), 0.0, 1.0)


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    """Write a [0, 1] array as an 8-bit grayscale PNG."""
    arr = np.clip(np.asarray(pixels, dtype=float), 0.0, 1.0)
    iio.imwrite(path, (arr * 255.0 + 0.5).astype(np.uint8))


# --------------------------------------------------------------------------
# sparse point table
# --------------------------------------------------------------------------

def write_sparse_points(path: str | Path, points3d: np.ndarray, projections: np.ndarray) -> None:
    points3d = np.asarray(points3d, dtype=float)
    projections = np.asarray(projections, dtype=float)
    p = points3d.shape[0]
    f = projections.shape[0]
    lines = [f"points {p}"]
    for row in points3d:
        lines.append(f"{row[0]:.17g} {row[1]:.17g} {row[2]:.17g}")
    lines.append(f"frames {f}")
    for g in range(f):
        for row in projections[g]:
            lines.append(f"{row[0]:.17g} {row[1]:.17g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sparse_points(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Returns (points3d (p, 3), projections (f, p, 2)); NaN marks untracked."""
    tokens = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    pos = 0

    def expect(word):
        nonlocal pos
        if pos >= len(tokens) or tokens[pos] != word:
            raise ValueError(f"malformed sparse-point file: expected '{word}'")
        pos += 1
        val = int(tokens[pos])
        pos += 1
        return val

    p = expect("points")
    pts = np.array(tokens[pos:pos + 3 * p], dtype=float).reshape(p, 3)
    pos += 3 * p
    f = expect("frames")
    proj = np.array(tokens[pos:pos + 2 * p * f], dtype=float).reshape(f, p, 2)
    return pts, proj


# --------------------------------------------------------------------------
# surface exports
# --------------------------------------------------------------------------

def write_point_cloud_ply(path: str | Path, points: np.ndarray,
                          values: np.ndarray | None = None) -> None:
    """ASCII PLY point cloud; optional scalar per point stored as 'quality'."""
    points = np.asarray(points, dtype=float)
    header = [
        "ply", "format ascii 1.0",
        f"element vertex {points.shape[0]}",
        "property float x", "property float y", "property float z",
    ]
    if values is not None:
        header.append("property float quality")
    header.append("end_header")
    body = []
    for i, row in enumerate(points):
        line = f"{row[0]:.8g} {row[1]:.8g} {row[2]:.8g}"
        if values is not None:
            line += f" {values[i]:.8g}"
        body.append(line)
    Path(path).write_text("\n".join(header + body) + "\n", encoding="utf-8")


def write_mesh_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    """Wavefront OBJ with 1-based face indices."""
    lines = [f"v {v[0]:.8g} {v[1]:.8g} {v[2]:.8g}" for v in np.asarray(vertices)]
    lines += [f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}" for f in np.asarray(faces, dtype=int)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def grid_mesh(dense) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate a DenseSurface's occupied grid cells into a mesh."""
    shape = dense.grid_shape
    index = -np.ones(shape[0] * shape[1], dtype=int)
    index[dense.grid_cells] = np.arange(dense.point_count)
    index = index.reshape(shape)
    faces = []
    occ = index >= 0
    for r in range(shape[0] - 1):
        for c in range(shape[1] - 1):
            if occ[r, c] and occ[r, c + 1] and occ[r + 1, c]:
                faces.append((index[r, c], index[r, c + 1], index[r + 1, c]))
            if occ[r + 1, c] and occ[r, c + 1] and occ[r + 1, c + 1]:
                faces.append((index[r + 1, c], index[r, c + 1], index[r + 1, c + 1]))
    return dense.points, np.asarray(faces, dtype=int)


def write_heatmap(path: str | Path, dense, per_point_error: np.ndarray) -> None:
    """Error heatmap PNG over the reference-view grid (viridis, white = empty)."""
    from matplotlib import cm

    shape = dense.grid_shape
    img = np.full(shape, np.nan)
    rows, cols = np.divmod(dense.grid_cells, shape[1])
    img[rows, cols] = per_point_error
    finite = np.isfinite(img)
    top = np.percentile(per_point_error, 98) if per_point_error.size else 1.0
    norm = np.zeros(shape)
    norm[finite] = np.clip(img[finite] / max(top, 1e-300), 0.0, 1.0)
    rgba = cm.viridis(norm)
    rgba[~finite] = [1.0, 1.0, 1.0, 1.0]
    iio.imwrite(path, (rgba[:, :, :3] * 255.0 + 0.5).astype(np.uint8))


# --------------------------------------------------------------------------
# json helpers
# --------------------------------------------------------------------------

def write_json(path: str | Path, data: dict) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
