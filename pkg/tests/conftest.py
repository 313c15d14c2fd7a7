"""Shared builders for synthetic stacks, meshes and patch fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from patchps import (
    PlaneSurface,
    SphereCapSurface,
    SyntheticScene,
    build_mesh,
    render,
)


def make_onmanifold_stack(f, b, missing, seed, noise=0.0, min_obs=6):
    """Random lights and on-manifold surface columns; returns (J, D, L, N).

    The mask is uniform random at the requested missing rate, repaired so
    every column keeps at least ``min_obs`` observations (columns below the
    4-observation limit are unconstrainable by construction).
    """
    rng = np.random.default_rng(seed)
    n = rng.normal(size=(3, b))
    n[2] = np.abs(n[2]) + 0.5
    n /= np.linalg.norm(n, axis=0)
    rho = rng.uniform(0.2, 1.0, size=b)
    N = np.vstack([rho, rho * n])
    ambient = rng.uniform(0.0, 0.3, size=(f, 1))
    dirs = rng.normal(size=(f, 3))
    dirs[:, 2] = np.abs(dirs[:, 2]) + 0.5
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    strength = rng.uniform(0.5, 1.2, size=(f, 1))
    L = np.hstack([ambient, strength * dirs])
    J = L @ N
    if noise > 0:
        J = J + noise * rng.normal(size=(f, b))
    D = (rng.random((f, b)) >= missing)
    for i in range(b):
        short = int(min_obs - D[:, i].sum())
        if short > 0:
            off = np.flatnonzero(~D[:, i])
            D[off[rng.permutation(off.size)[:short]], i] = True
    return J, D, L, N


def stack_from_arrays(J, D, pitch=1.0):
    """Wrap a raw (J, D) pair into a PatchStack on a trivial full-box grid."""
    from patchps import PatchStack, TemplateGrid

    f, b = J.shape
    cols = int(np.ceil(np.sqrt(b)))
    rows = int(np.ceil(b / cols))
    span = float(max(rows, cols)) * pitch
    tri = np.array([[-span, 3 * span, -span], [-span, -span, 3 * span]])
    grid = TemplateGrid(
        vertices2d=tri,
        base_vertices2d=tri,
        origin=np.zeros(2),
        pitch=pitch,
        shape=(rows, cols),
        pixel_index_set=np.arange(b),
    )
    return PatchStack(
        intensities=np.asarray(J, dtype=float),
        observed=np.asarray(D, dtype=bool),
        template_pixels=np.arange(b),
        template_shape=(rows, cols),
        triangle_id=0,
        grid=grid,
    )


@pytest.fixture(scope="session")
def plane_scene_render():
    scene = SyntheticScene(
        surface=PlaneSurface(gx=0.15, gy=-0.1, offset=0.2),
        footprint=1.0, frame_count=10, arc_span_deg=40.0,
        camera_distance=12.0, image_size=150, sparse_points=25,
        light_zenith_deg=(10.0, 35.0), noise_sigma=0.0, seed=3,
    )
    return render(scene)


@pytest.fixture(scope="session")
def cap_scene_render():
    scene = SyntheticScene(
        surface=SphereCapSurface(rim=0.85, cap_height=0.38),
        footprint=1.0, frame_count=12, arc_span_deg=50.0,
        camera_distance=12.0, image_size=150, sparse_points=30,
        light_zenith_deg=(20.0, 50.0), noise_sigma=0.0, seed=5,
    )
    return render(scene)


@pytest.fixture(scope="session")
def plane_mesh(plane_scene_render):
    r = plane_scene_render
    return build_mesh(r.sparse_points3d, r.projections)


def random_triangle_2d(rng, scale=10.0, min_area=0.5):
    while True:
        verts = rng.uniform(-scale, scale, size=(2, 3))
        e1 = verts[:, 1] - verts[:, 0]
        e2 = verts[:, 2] - verts[:, 0]
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) / 2.0 >= min_area:
            return verts


def random_triangle_3d(rng, scale=5.0, min_area=0.5):
    while True:
        verts = rng.uniform(-scale, scale, size=(3, 3))
        area = 0.5 * np.linalg.norm(
            np.cross(verts[:, 1] - verts[:, 0], verts[:, 2] - verts[:, 0]))
        if area >= min_area:
            return verts
