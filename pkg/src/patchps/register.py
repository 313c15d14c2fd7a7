"""Registration of per-view patches onto the fronto-parallel template.

Every template pixel is mapped into each source view through barycentric
transfer (template triangle -> per-view projected triangle) and sampled by
bilinear interpolation. Samples falling outside the source image or mask are
unobserved, as are extremely dark and saturated intensities.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .decompose import ImageFrame, PatchMask
from .geometry import DegenerateTriangleError, barycentric_grid, signed_area

logger = logging.getLogger(__name__)

TAU_DARK = 0.02
TAU_SAT = 0.98

# columns with fewer observations cannot constrain an albedo + normal column
MIN_COLUMN_OBS = 4


@dataclass(frozen=True)
class TemplateGrid:
    """Raster of one template triangle in its own physical units.

    Pixel (i, j) of the local raster sits at physical coordinates
    ``origin + pitch * (j, i)``. ``pixel_index_set`` lists the raster pixels
    (row-major flat indices) inside the enlarged template triangle.
    """

    vertices2d: np.ndarray        # enlarged template triangle, (2, 3)
    base_vertices2d: np.ndarray   # un-enlarged template triangle, (2, 3)
    origin: np.ndarray            # (2,) physical coords of raster pixel (0, 0)
    pitch: float                  # physical units per raster pixel
    shape: tuple[int, int]        # (rows, cols) of the raster
    pixel_index_set: np.ndarray   # flat indices into the raster

    @property
    def pixel_count(self) -> int:
        return int(self.pixel_index_set.size)

    def pixel_coords(self) -> np.ndarray:
        """(2, b) physical coordinates of the template pixel centers."""
        rows, cols = np.divmod(self.pixel_index_set, self.shape[1])
        return self.origin[:, None] + self.pitch * np.vstack([cols, rows]).astype(float)

    def barycentric(self) -> np.ndarray:
        """(3, b) barycentric coordinates w.r.t. the enlarged template."""
        return barycentric_grid(self.pixel_coords(), self.vertices2d)


def make_template_grid(
    template2d: np.ndarray,
    base_template2d: np.ndarray | None = None,
    target_pixels: int = 1024,
    max_side: int = 64,
) -> TemplateGrid:
    """Choose a raster pitch so the template holds ~``target_pixels`` pixels.

    ``target_pixels`` is normally the largest source-patch pixel count, which
    prevents systematic downsampling; ``max_side`` caps the raster dimensions.
    """
    verts = np.asarray(template2d, dtype=float)
    area = abs(signed_area(verts))
    if area <= 1e-14:
        raise DegenerateTriangleError("degenerate template triangle")
    if base_template2d is None:
        base_template2d = verts
    target_pixels = max(int(target_pixels), 16)
    pitch = float(np.sqrt(area / target_pixels))
    span = verts.max(axis=1) - verts.min(axis=1)
    min_pitch = float(span.max()) / float(max_side - 2)
    pitch = max(pitch, min_pitch, 1e-12)

    lo = verts.min(axis=1) - 0.5 * pitch
    cols = int(np.ceil(span[0] / pitch)) + 2
    rows = int(np.ceil(span[1] / pitch)) + 2
    xs, ys = np.meshgrid(np.arange(cols), np.arange(rows))
    pts = lo[:, None] + pitch * np.vstack([xs.ravel(), ys.ravel()]).astype(float)
    lam = barycentric_grid(pts, verts)
    inside = np.all((lam >= -1e-12) & (lam <= 1.0 + 1e-12), axis=0)
    return TemplateGrid(
        vertices2d=verts,
        base_vertices2d=np.asarray(base_template2d, dtype=float),
        origin=lo,
        pitch=pitch,
        shape=(rows, cols),
        pixel_index_set=np.flatnonzero(inside),
    )


def bilinear_sample(image: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear interpolation of (2, n) points; second output flags in-bounds."""
    h, w = image.shape
    x, y = points
    valid = (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xc = np.clip(x, 0.0, w - 1.0)
    yc = np.clip(y, 0.0, h - 1.0)
    x0 = np.floor(xc).astype(int)
    y0 = np.floor(yc).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    val = (
        image[y0, x0] * (1 - fx) * (1 - fy)
        + image[y0, x1] * fx * (1 - fy)
        + image[y1, x0] * (1 - fx) * fy
        + image[y1, x1] * fx * fy
    )
    return val, valid


def nearest_sample(image: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor sampling; kept for oracle comparisons."""
    h, w = image.shape
    x, y = points
    valid = (x >= -0.5) & (x < w - 0.5) & (y >= -0.5) & (y < h - 0.5)
    xi = np.clip(np.rint(x).astype(int), 0, w - 1)
    yi = np.clip(np.rint(y).astype(int), 0, h - 1)
    return image[yi, xi], valid


@dataclass(frozen=True)
class PatchStack:
    """Multi-view intensity matrix of one triangle with its observation mask."""

    intensities: np.ndarray       # (f, b)
    observed: np.ndarray          # (f, b) bool
    template_pixels: np.ndarray   # (b,) flat indices into the template raster
    template_shape: tuple[int, int]
    triangle_id: int
    grid: TemplateGrid

    @property
    def frame_count(self) -> int:
        return self.intensities.shape[0]

    @property
    def pixel_count(self) -> int:
        return self.intensities.shape[1]

    def weak_columns(self) -> np.ndarray:
        """Template pixels observed in fewer than MIN_COLUMN_OBS views."""
        return np.flatnonzero(self.observed.sum(axis=0) < MIN_COLUMN_OBS)


def register_patch(
    frame: ImageFrame,
    mask: PatchMask,
    source_vertices2d: np.ndarray,
    grid: TemplateGrid,
    interpolation: str = "bilinear",
) -> tuple[np.ndarray, np.ndarray]:
    """Resample one view's patch onto the template raster.

    Returns (values, observed) over the template pixel set. Template pixels
    whose source point leaves the source image or mask are unobserved; an
    out-of-view or empty mask yields an all-unobserved row.
    """
    b = grid.pixel_count
    values = np.zeros(b)
    observed = np.zeros(b, dtype=bool)
    verts = np.asarray(source_vertices2d, dtype=float)
    if mask.out_of_view or mask.pixel_count == 0 or not np.isfinite(verts).all():
        return values, observed
    if abs(signed_area(verts)) <= 1e-14:
        raise DegenerateTriangleError("degenerate source triangle")

    # source points share the template pixels' barycentric coordinates, so
    # they always land inside the source triangle; only the image bounds can
    # exclude them
    src = verts @ grid.barycentric()
    sampler = bilinear_sample if interpolation == "bilinear" else nearest_sample
    val, observed = sampler(frame.pixels, src)
    values[observed] = val[observed]
    return values, observed.copy()


def assemble_stack(
    rows: np.ndarray,
    observed: np.ndarray,
    grid: TemplateGrid,
    triangle_id: int,
    tau_dark: float = TAU_DARK,
    tau_sat: float = TAU_SAT,
) -> PatchStack:
    """Stack registered rows and zero the mask on dark/saturated intensities."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    obs = np.atleast_2d(np.asarray(observed, dtype=bool))
    if rows.shape != obs.shape:
        raise ValueError(f"rows {rows.shape} and observed {obs.shape} disagree")
    if rows.shape[1] != grid.pixel_count:
        raise ValueError(
            f"row length {rows.shape[1]} does not match template pixel count {grid.pixel_count}"
        )
    usable = obs & (rows >= tau_dark) & (rows <= tau_sat)
    stack = PatchStack(
        intensities=rows,
        observed=usable,
        template_pixels=grid.pixel_index_set.copy(),
        template_shape=grid.shape,
        triangle_id=triangle_id,
        grid=grid,
    )
    weak = stack.weak_columns()
    if weak.size:
        logger.debug(
            "triangle %d: %d of %d template pixels observed in < %d views",
            triangle_id, weak.size, stack.pixel_count, MIN_COLUMN_OBS,
        )
    return stack


def missing_fraction(stack: PatchStack) -> float:
    """Share of unobserved entries in the multi-view intensity matrix."""
    total = stack.intensities.size
    if total == 0:
        return 0.0
    return 1.0 - float(stack.observed.sum()) / total
