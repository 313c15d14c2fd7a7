"""Property suites: randomized invariants run under hypothesis (>= 100 cases)."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from patchps import (
    apply_correction,
    barycentric_of,
    build_mesh,
    enlarge_triangle,
    facet_frame,
    project_manifold,
    solve_patch,
)
from patchps.align import FacetPointSet, make_correction
from patchps.solver import SolverOptions

from conftest import make_onmanifold_stack, stack_from_arrays

COMMON = dict(deadline=None, max_examples=100,
              suppress_health_check=[HealthCheck.too_slow,
                                     HealthCheck.large_base_example])


def _triangle_2d(draw, scale=50.0, min_area=1.0):
    while True:
        vals = draw(st.lists(
            st.floats(-scale, scale, allow_nan=False), min_size=6, max_size=6))
        tri = np.array(vals).reshape(2, 3)
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        if abs(e1[0] * e2[1] - e1[1] * e2[0]) / 2 >= min_area:
            return tri


def _triangle_3d(draw, scale=20.0, min_area=1.0):
    while True:
        vals = draw(st.lists(
            st.floats(-scale, scale, allow_nan=False), min_size=9, max_size=9))
        tri = np.array(vals).reshape(3, 3)
        area = 0.5 * np.linalg.norm(
            np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]))
        if area >= min_area:
            return tri


triangle_2d = st.composite(_triangle_2d)
triangle_3d = st.composite(_triangle_3d)


@st.composite
def rigid_motion(draw):
    axis = np.array([draw(st.floats(-1, 1)) for _ in range(3)])
    if np.linalg.norm(axis) < 1e-3:
        axis = np.array([0.0, 0.0, 1.0])
    axis /= np.linalg.norm(axis)
    ang = draw(st.floats(-3.0, 3.0))
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    R = np.eye(3) + np.sin(ang) * K + (1 - np.cos(ang)) * (K @ K)
    t = np.array([draw(st.floats(-10, 10)) for _ in range(3)])
    return R, t


class TestBarycentricSums:
    @settings(**COMMON)
    @given(tri=triangle_2d(), w=st.lists(st.floats(0.01, 1.0), min_size=3,
                                         max_size=3))
    def test_interior_point_sums_to_one(self, tri, w):
        lam_true = np.array(w) / np.sum(w)
        point = tri @ lam_true
        lam = barycentric_of(point, tri)
        assert abs(lam.alpha + lam.beta + lam.gamma - 1.0) < 1e-9
        assert all(v >= -1e-9 for v in lam.as_array())

    @settings(**COMMON)
    @given(tri=triangle_2d(), x=st.floats(-60, 60), y=st.floats(-60, 60))
    def test_any_point_sums_to_one(self, tri, x, y):
        lam = barycentric_of(np.array([x, y]), tri)
        assert abs(lam.alpha + lam.beta + lam.gamma - 1.0) < 1e-9


class TestFacetFrameIsometry:
    @settings(**COMMON)
    @given(tri=triangle_3d())
    def test_template_preserves_distances(self, tri):
        fr = facet_frame(tri)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            d3 = np.linalg.norm(tri[:, a] - tri[:, b])
            d2 = np.linalg.norm(fr.template2d[:, a] - fr.template2d[:, b])
            assert abs(d3 - d2) < 1e-9 * max(1.0, d3)

    @settings(**COMMON)
    @given(tri=triangle_3d())
    def test_rotation_is_proper_and_aligns_normal(self, tri):
        fr = facet_frame(tri)
        assert np.abs(fr.rotation @ fr.rotation.T - np.eye(3)).max() < 1e-12
        assert np.linalg.det(fr.rotation) > 1.0 - 1e-9
        assert np.abs(fr.rotation @ fr.facet_normal - [0, 0, 1]).max() < 1e-9


class TestEnlargeTriangle:
    @settings(**COMMON)
    @given(tri=triangle_2d(), s=st.floats(1.01, 4.0))
    def test_inverse_composition_identity(self, tri, s):
        back = enlarge_triangle(enlarge_triangle(tri, s), 1.0 / s)
        assert np.abs(back - tri).max() < 1e-12 * max(1.0, np.abs(tri).max())


class TestManifoldProjection:
    @settings(**COMMON)
    @given(col=st.lists(st.floats(-10, 10, allow_nan=False), min_size=4,
                        max_size=4))
    def test_projection_idempotent_and_structured(self, col):
        x = np.array(col)
        once = project_manifold(x)
        twice = project_manifold(once)
        assert np.abs(twice - once).max() < 1e-12 * max(1.0, np.abs(once).max())
        rho = once[0]
        assert rho >= 0.0
        if np.linalg.norm(x[1:]) > 0:  # zero tail is the flagged albedo-only case
            tail = np.linalg.norm(once[1:])
            assert abs(tail - rho) < 1e-9 * max(rho, 1.0)


class TestRankFour:
    @settings(**COMMON)
    @given(seed=st.integers(0, 10 ** 6))
    def test_onmanifold_stacks_have_rank_at_most_four(self, seed):
        J, D, L, N = make_onmanifold_stack(8, 60, 0.0, seed=seed)
        s = np.linalg.svd(J, compute_uv=False)
        assert s[4] <= 1e-9 * max(s[0], 1e-30)


class TestSolverProperties:
    @settings(**COMMON)
    @given(seed=st.integers(0, 10 ** 6), missing=st.floats(0.0, 0.45))
    def test_manifold_feasibility_and_monotonicity(self, seed, missing):
        J, D, L, N = make_onmanifold_stack(7, 40, missing, seed=seed,
                                           noise=0.002, min_obs=5)
        opts = SolverOptions(max_iters=40, max_restarts=1)
        factors = solve_patch(stack_from_arrays(J, D), opts=opts)
        rho = factors.surface[0]
        tail = np.linalg.norm(factors.surface[1:], axis=0)
        ok = rho > 1e-12
        assert np.all(np.abs(tail[ok] / rho[ok] - 1.0) < 1e-6)
        assert np.all(rho >= 0.0)
        hist = factors.residual_history
        assert np.all(np.diff(hist) <= 1e-12 * np.maximum(hist[:-1], 1.0))


class TestDeterminism:
    @settings(**COMMON)
    @given(seed=st.integers(0, 10 ** 6))
    def test_mesh_invariant_under_point_permutation(self, seed):
        rng = np.random.default_rng(seed)
        pts2d = rng.uniform(0, 60, size=(12, 2))
        pts3d = np.hstack([pts2d, rng.uniform(0, 1, size=(12, 1))])
        proj = pts2d[None, :, :]
        mesh_a = build_mesh(pts3d, proj, reference_view=0, drop_slivers=False)
        perm = rng.permutation(12)
        inverse = np.argsort(perm)
        mesh_b = build_mesh(pts3d[perm], proj[:, perm], reference_view=0,
                            drop_slivers=False)
        set_a = {tuple(sorted(t)) for t in mesh_a.triangles}
        set_b = {tuple(sorted(inverse[np.array(t)])) for t in
                 np.array([perm[t] for t in mesh_b.triangles])}
        # map mesh_b triangles back through the permutation
        set_b = {tuple(sorted(perm[np.array(t)])) for t in mesh_b.triangles}
        assert set_a == set_b

    @settings(**COMMON)
    @given(seed=st.integers(0, 10 ** 6),
           dx=st.floats(-500, 500), dy=st.floats(-500, 500))
    def test_mesh_invariant_under_translation(self, seed, dx, dy):
        rng = np.random.default_rng(seed)
        pts2d = rng.uniform(0, 60, size=(12, 2))
        pts3d = np.hstack([pts2d, rng.uniform(0, 1, size=(12, 1))])
        mesh_a = build_mesh(pts3d, pts2d[None, :, :], reference_view=0,
                            drop_slivers=False)
        mesh_b = build_mesh(pts3d, (pts2d + [dx, dy])[None, :, :],
                            reference_view=0, drop_slivers=False)
        set_a = {tuple(sorted(t)) for t in mesh_a.triangles}
        set_b = {tuple(sorted(t)) for t in mesh_b.triangles}
        assert set_a == set_b


class TestRigidEquivariance:
    @settings(**COMMON)
    @given(motion=rigid_motion())
    def test_corrected_patch_points_move_rigidly(self, motion):
        R, t = motion
        rng = np.random.default_rng(0)
        base = rng.normal(size=(3, 30))
        normal = np.array([0.2, -0.1, 1.0])
        normal /= np.linalg.norm(normal)
        elev = rng.normal(size=30)
        tpl = np.vstack([rng.normal(size=(2, 30)), elev])
        fps = FacetPointSet(
            base_points=base, elevations=elev, template_points=tpl,
            normal=normal, triangle_id=0, vertex_ids=np.arange(3),
            base_barycentric=rng.dirichlet(np.ones(3), size=30).T, pitch=1.0)
        corr = make_correction(np.array([0.05, -0.02, 0.9]), 0.1)
        moved = FacetPointSet(
            base_points=R @ base + t[:, None], elevations=elev,
            template_points=tpl, normal=R @ normal, triangle_id=0,
            vertex_ids=np.arange(3), base_barycentric=fps.base_barycentric,
            pitch=1.0)
        got = apply_correction(moved, corr).points()
        expected = R @ apply_correction(fps, corr).points() + t[:, None]
        assert np.abs(got - expected).max() < 1e-8

    @settings(**COMMON)
    @given(motion=rigid_motion())
    def test_weight_invariant_under_rigid_motion(self, motion):
        R, t = motion
        rng = np.random.default_rng(1)
        tri = rng.normal(size=(3, 3)) * 5
        lam = rng.dirichlet(np.ones(3))
        point = tri @ lam
        from patchps import weight_of
        a = weight_of(point, tri)
        b = weight_of(R @ point + t, R @ tri + t[:, None])
        assert abs(a - b) < 1e-8
