"""
Height from normals
===================

Integrate analytic normal fields into height maps and compare against the
generating surfaces: a tilted plane reintegrates to machine precision, a
spherical cap to a fraction of a percent of its height.
"""

import numpy as np

from patchps import PatchStack, PhotometricFactors, TemplateGrid, integrate_normals

side = 64
pixels = side * side
tri = np.array([[-1.0, 3.0 * side, -1.0], [-1.0, -1.0, 3.0 * side]])
grid = TemplateGrid(vertices2d=tri, base_vertices2d=tri, origin=np.zeros(2),
                    pitch=1.0, shape=(side, side),
                    pixel_index_set=np.arange(pixels))
stack = PatchStack(intensities=np.zeros((4, pixels)),
                   observed=np.ones((4, pixels), dtype=bool),
                   template_pixels=np.arange(pixels),
                   template_shape=(side, side), triangle_id=0, grid=grid)


def integrate(normals, backend):
    surface = np.vstack([np.ones(pixels), normals])
    factors = PhotometricFactors(lighting=np.zeros((4, 4)), surface=surface,
                                 residual=0.0)
    return integrate_normals(factors, stack, backend=backend)


xy = grid.pixel_coords()

# tilted plane z = 0.35 x - 0.25 y
n = np.array([-0.35, 0.25, 1.0])
n /= np.linalg.norm(n)
plane_normals = np.tile(n[:, None], (1, pixels))
z_true = 0.35 * xy[0] - 0.25 * xy[1]
for backend in ("dct", "poisson"):
    hf = integrate(plane_normals, backend)
    err = np.sqrt(np.mean((hf.points()[2] - (z_true - z_true.mean())) ** 2))
    print(f"plane, {backend:7s}: rms {err:.2e} over height span {np.ptp(z_true):.1f}")

# spherical cap of radius 80
radius = 80.0
cx = cy = (side - 1) / 2.0
r2 = (xy[0] - cx) ** 2 + (xy[1] - cy) ** 2
root = np.sqrt(radius ** 2 - r2)
cap_normals = np.vstack([(xy[0] - cx) / radius, (xy[1] - cy) / radius,
                         root / radius])
z_cap = root - root.mean()
for backend in ("dct", "poisson"):
    hf = integrate(cap_normals, backend)
    err = np.sqrt(np.mean((hf.points()[2] - z_cap) ** 2))
    print(f"sphere cap, {backend:7s}: rms {err / np.ptp(z_cap):.3%} of cap height")
