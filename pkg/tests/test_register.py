"""Template registration and stack assembly."""

import numpy as np
import pytest

from patchps import (
    ImageFrame,
    TemplateGrid,
    assemble_stack,
    make_template_grid,
    missing_fraction,
    rasterize_mask,
    register_patch,
)
from patchps.geometry import barycentric_grid
from patchps.register import bilinear_sample


def _integer_grid(tri):
    """Template grid whose pixel centers sit exactly on integer coordinates."""
    lo = np.floor(tri.min(axis=1)).astype(int)
    hi = np.ceil(tri.max(axis=1)).astype(int)
    rows = int(hi[1] - lo[1] + 1)
    cols = int(hi[0] - lo[0] + 1)
    xs, ys = np.meshgrid(np.arange(cols), np.arange(rows))
    pts = np.vstack([xs.ravel() + lo[0], ys.ravel() + lo[1]]).astype(float)
    lam = barycentric_grid(pts, tri)
    inside = np.all((lam >= -1e-12) & (lam <= 1 + 1e-12), axis=0)
    return TemplateGrid(
        vertices2d=tri, base_vertices2d=tri, origin=lo.astype(float),
        pitch=1.0, shape=(rows, cols), pixel_index_set=np.flatnonzero(inside),
    )


def _smooth_image(shape, seed=0):
    h, w = shape
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    img = 0.5 + 0.3 * np.sin(xs / 7.0) * np.cos(ys / 9.0) + 0.1 * np.cos(xs / 3.0)
    return np.clip(img, 0.0, 1.0)


class TestRegisterPatch:
    def test_identity_warp_reads_raster(self):
        tri = np.array([[2.0, 17.0, 3.0], [2.0, 4.0, 16.0]])
        grid = _integer_grid(tri)
        img = _smooth_image((20, 20))
        frame = ImageFrame(pixels=img, frame_id=0)
        mask = rasterize_mask(tri, (20, 20))
        values, observed = register_patch(frame, mask, tri, grid)
        assert observed.all()
        coords = grid.pixel_coords()
        direct = img[coords[1].astype(int), coords[0].astype(int)]
        np.testing.assert_allclose(values, direct, atol=1e-12)

    def test_scaled_source_brute_force(self):
        tri = np.array([[2.0, 17.0, 3.0], [2.0, 4.0, 16.0]])
        grid = _integer_grid(tri)
        centroid = tri.mean(axis=1, keepdims=True)
        src = centroid + 0.5 * (tri - centroid) + np.array([[3.0], [2.0]])
        img = _smooth_image((20, 20))
        frame = ImageFrame(pixels=img, frame_id=0)
        mask = rasterize_mask(src, (20, 20))
        values, observed = register_patch(frame, mask, src, grid)
        assert observed.all()  # interpolation keeps every template pixel observed
        lam = grid.barycentric()
        for k in range(0, grid.pixel_count, 7):
            pt = src @ lam[:, k]
            val, _ = bilinear_sample(img, pt.reshape(2, 1))
            assert abs(values[k] - val[0]) < 1e-6

    def test_source_partially_outside(self):
        tri = np.array([[2.0, 17.0, 3.0], [2.0, 4.0, 16.0]])
        grid = _integer_grid(tri)
        src = tri - np.array([[9.0], [0.0]])  # push half the triangle off-image
        img = _smooth_image((20, 20))
        frame = ImageFrame(pixels=img, frame_id=0)
        mask = rasterize_mask(src, (20, 20))
        values, observed = register_patch(frame, mask, src, grid)
        assert 0 < observed.sum() < grid.pixel_count
        # oracle: a template pixel is observed iff its source point lies
        # inside the image bounds (exhaustive mapping loop)
        lam = grid.barycentric()
        expected = np.zeros(grid.pixel_count, dtype=bool)
        for k in range(grid.pixel_count):
            x, y = src @ lam[:, k]
            expected[k] = 0.0 <= x <= 19.0 and 0.0 <= y <= 19.0
        np.testing.assert_array_equal(observed, expected)

    def test_empty_mask_all_unobserved(self):
        tri = np.array([[2.0, 17.0, 3.0], [2.0, 4.0, 16.0]])
        grid = _integer_grid(tri)
        img = _smooth_image((20, 20))
        frame = ImageFrame(pixels=img, frame_id=0)
        far = tri + 100.0
        mask = rasterize_mask(far, (20, 20))
        values, observed = register_patch(frame, mask, far, grid)
        assert not observed.any()

    def test_consistent_pattern_across_views(self):
        # the same barycentric-defined pattern seen through two different
        # source triangles registers to near-identical template rows
        tri = np.array([[2.0, 30.0, 4.0], [2.0, 6.0, 28.0]])
        grid = make_template_grid(tri, target_pixels=500)
        rng = np.random.default_rng(9)

        def paint(src, shape):
            img = np.zeros(shape)
            ys, xs = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]),
                                 indexing="ij")
            pts = np.vstack([xs.ravel(), ys.ravel()]).astype(float)
            lam = barycentric_grid(pts, src)
            vals = 0.4 + 0.3 * np.sin(4.0 * lam[0]) * np.cos(5.0 * lam[1])
            return np.clip(vals.reshape(shape), 0, 1)

        rows = []
        for _ in range(2):
            a = rng.uniform(5, 15)
            src = (tri * rng.uniform(0.8, 1.2)
                   + np.array([[a], [rng.uniform(5, 15)]]))
            img = paint(src, (60, 60))
            frame = ImageFrame(pixels=img, frame_id=0)
            mask = rasterize_mask(src, (60, 60))
            vals, obs = register_patch(frame, mask, src, grid)
            rows.append((vals, obs))
        both = rows[0][1] & rows[1][1]
        assert both.sum() > 100
        diff = np.abs(rows[0][0][both] - rows[1][0][both])
        assert diff.max() < 2e-3


class TestAssembleStack:
    def test_identical_rows_rank_one(self):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        row = np.linspace(0.1, 0.9, grid.pixel_count)
        rows = np.tile(row, (5, 1))
        obs = np.ones_like(rows, dtype=bool)
        stack = assemble_stack(rows, obs, grid, triangle_id=0)
        s = np.linalg.svd(stack.intensities, compute_uv=False)
        assert s[1] < 1e-12 * s[0]

    def test_saturated_row_unobserved(self):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        rows = np.vstack([np.full(grid.pixel_count, 1.0),
                          np.full(grid.pixel_count, 0.5)])
        obs = np.ones_like(rows, dtype=bool)
        stack = assemble_stack(rows, obs, grid, triangle_id=0, tau_sat=0.98)
        assert not stack.observed[0].any()
        assert stack.observed[1].all()

    def test_dark_pixels_unobserved(self):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        row = np.full(grid.pixel_count, 0.5)
        row[:5] = 0.001
        stack = assemble_stack(row[None, :], np.ones((1, row.size), dtype=bool),
                               grid, triangle_id=0)
        assert not stack.observed[0, :5].any()
        assert stack.observed[0, 5:].all()

    def test_row_length_mismatch(self):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        with pytest.raises(ValueError):
            assemble_stack(np.zeros((2, 3)), np.ones((2, 3), dtype=bool),
                           grid, triangle_id=0)

    def test_weak_columns_flagged(self):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        rows = np.full((6, grid.pixel_count), 0.5)
        obs = np.ones_like(rows, dtype=bool)
        obs[2:, 0] = False  # first column has 2 observations
        stack = assemble_stack(rows, obs, grid, triangle_id=0)
        assert 0 in stack.weak_columns()


class TestMissingFraction:
    @pytest.mark.parametrize("fill,expected", [(True, 0.0), (False, 1.0)])
    def test_extremes(self, fill, expected):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        rows = np.full((4, grid.pixel_count), 0.5)
        obs = np.full_like(rows, fill, dtype=bool)
        stack = assemble_stack(rows, obs, grid, triangle_id=0)
        assert missing_fraction(stack) == expected

    def test_half(self):
        tri = np.array([[0.0, 10.0, 0.0], [0.0, 0.0, 10.0]])
        grid = make_template_grid(tri, target_pixels=64)
        rows = np.full((2, grid.pixel_count), 0.5)
        obs = np.zeros_like(rows, dtype=bool)
        obs[0] = True
        stack = assemble_stack(rows, obs, grid, triangle_id=0)
        assert missing_fraction(stack) == 0.5


class TestTemplateGrid:
    def test_target_pixel_count(self):
        tri = np.array([[0.0, 40.0, 0.0], [0.0, 0.0, 40.0]])
        grid = make_template_grid(tri, target_pixels=800)
        assert 400 <= grid.pixel_count <= 1600

    def test_max_side_cap(self):
        tri = np.array([[0.0, 500.0, 0.0], [0.0, 0.0, 500.0]])
        grid = make_template_grid(tri, target_pixels=10 ** 6, max_side=64)
        assert grid.shape[0] <= 64 and grid.shape[1] <= 64
