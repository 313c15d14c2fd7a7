"""Per-triangle binary masks and masked image patches.

A pixel belongs to a triangle when its barycentric coordinates w.r.t. the
enlarged triangle all lie in [0, 1] (pixel-center sampling, inclusive
boundary). Masked patches are plain element-wise products of mask and frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateTriangleError, barycentric_grid, signed_area

BOUNDARY_TOL = 1e-12

GRAY_WEIGHTS = np.array([0.299, 0.587, 0.114])


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """Collapse an (h, w, 3) color image to (h, w) luminance; pass gray through."""
    arr = np.asarray(pixels, dtype=float)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        return arr[:, :, :3] @ GRAY_WEIGHTS
    raise ValueError(f"expected (h, w) or (h, w, 3) image, got {arr.shape}")


@dataclass(frozen=True)
class ImageFrame:
    """One grayscale frame with values in [0, 1]."""

    pixels: np.ndarray
    frame_id: int

    def __post_init__(self):
        pix = self.pixels
        if pix.ndim != 2:
            raise ValueError(f"frame pixels must be 2D, got shape {pix.shape}")
        if not np.isfinite(pix).all():
            raise ValueError("frame contains non-finite values")
        if pix.min() < 0.0 or pix.max() > 1.0:
            raise ValueError("frame values must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape


@dataclass(frozen=True)
class PatchMask:
    """Binary membership mask of one (frame, triangle) pair."""

    mask: np.ndarray                # (h, w) uint8
    pixel_index_set: np.ndarray     # flat indices (row-major) of set pixels
    triangle_id: int
    frame_id: int
    out_of_view: bool = False

    @property
    def pixel_count(self) -> int:
        return int(self.pixel_index_set.size)


def rasterize_mask(
    vertices2d: np.ndarray,
    image_size: tuple[int, int],
    triangle_id: int = -1,
    frame_id: int = -1,
    back_facing: bool = False,
) -> PatchMask:
    """Rasterize an (enlarged) triangle into a binary pixel mask.

    A triangle entirely outside the image, with non-finite vertices, or marked
    back-facing yields an empty mask flagged out-of-view. A degenerate
    triangle raises.
    """
    h, w = image_size
    if h <= 0 or w <= 0:
        raise ValueError(f"image size must be positive, got {image_size}")
    mask = np.zeros((h, w), dtype=np.uint8)
    verts = np.asarray(vertices2d, dtype=float)
    if back_facing or not np.isfinite(verts).all():
        return PatchMask(mask, np.empty(0, dtype=int), triangle_id, frame_id, out_of_view=True)
    if abs(signed_area(verts)) <= 1e-14:
        raise DegenerateTriangleError("cannot rasterize a degenerate triangle")

    x0 = max(int(np.ceil(verts[0].min() - BOUNDARY_TOL)), 0)
    x1 = min(int(np.floor(verts[0].max() + BOUNDARY_TOL)), w - 1)
    y0 = max(int(np.ceil(verts[1].min() - BOUNDARY_TOL)), 0)
    y1 = min(int(np.floor(verts[1].max() + BOUNDARY_TOL)), h - 1)
    if x0 > x1 or y0 > y1:
        return PatchMask(mask, np.empty(0, dtype=int), triangle_id, frame_id, out_of_view=True)

    xs, ys = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    pts = np.vstack([xs.ravel(), ys.ravel()]).astype(float)
    lam = barycentric_grid(pts, verts)
    inside = np.all((lam >= -BOUNDARY_TOL) & (lam <= 1.0 + BOUNDARY_TOL), axis=0)
    mask[ys.ravel()[inside], xs.ravel()[inside]] = 1
    idx = np.flatnonzero(mask.ravel())
    return PatchMask(mask, idx, triangle_id, frame_id, out_of_view=idx.size == 0)


def extract_patch(frame: ImageFrame, mask: PatchMask) -> np.ndarray:
    """Element-wise product of mask and frame; off-mask pixels are zero."""
    if frame.shape != mask.mask.shape:
        raise ValueError(
            f"frame shape {frame.shape} does not match mask shape {mask.mask.shape}"
        )
    return frame.pixels * mask.mask
