"""
Masked photometric factorization of one patch
=============================================

Build a multi-view intensity matrix from known lights and surface columns,
hide half of the entries, and recover both factors with the manifold-
constrained solver. The factors are only identified up to a gauge, so the
comparison goes through the predicted intensities.
"""

import numpy as np

from patchps import PatchStack, TemplateGrid, solve_patch

rng = np.random.default_rng(7)
frames, pixels = 20, 800

# ground truth: albedo * [1; n] columns and ambient+direction light rows
normals = rng.normal(size=(3, pixels))
normals[2] = np.abs(normals[2]) + 0.5
normals /= np.linalg.norm(normals, axis=0)
albedo = rng.uniform(0.3, 1.0, size=pixels)
surface_true = np.vstack([albedo, albedo * normals])

directions = rng.normal(size=(frames, 3))
directions[:, 2] = np.abs(directions[:, 2]) + 0.5
directions /= np.linalg.norm(directions, axis=1, keepdims=True)
lights_true = np.hstack([rng.uniform(0.0, 0.2, (frames, 1)),
                         rng.uniform(0.6, 1.1, (frames, 1)) * directions])

intensities = lights_true @ surface_true
observed = rng.random((frames, pixels)) >= 0.5
print(f"stack {frames}x{pixels}, {(~observed).mean():.0%} of entries hidden")

# wrap into a patch stack on a trivial raster
side = int(np.ceil(np.sqrt(pixels)))
tri = np.array([[-1.0, 3.0 * side, -1.0], [-1.0, -1.0, 3.0 * side]])
grid = TemplateGrid(vertices2d=tri, base_vertices2d=tri, origin=np.zeros(2),
                    pitch=1.0, shape=(side, side),
                    pixel_index_set=np.arange(pixels))
stack = PatchStack(intensities=intensities, observed=observed,
                   template_pixels=np.arange(pixels),
                   template_shape=(side, side), triangle_id=0, grid=grid)

factors = solve_patch(stack)
relative = factors.residual / np.sum((observed * intensities) ** 2)
print(f"masked residual: {relative:.2e} of the observed energy "
      f"({factors.residual_history.size - 1} iterations)")

hidden = ~observed
completion = factors.predicted()
rms = np.sqrt(np.mean((completion[hidden] - intensities[hidden]) ** 2))
rms /= np.sqrt(np.mean(intensities[hidden] ** 2))
print(f"hidden-entry completion rms: {rms:.2e} (relative)")

# factors are only defined up to an invertible gauge; fit it, then compare
# the unit normals
recovered = factors.surface
gauge = (surface_true @ recovered.T) @ np.linalg.inv(recovered @ recovered.T)
mapped = gauge @ recovered
n_rec = mapped[1:] / np.maximum(mapped[0], 1e-12)
n_rec /= np.linalg.norm(n_rec, axis=0)
angles = np.degrees(np.arccos(np.clip(np.sum(n_rec * normals, axis=0), -1, 1)))
print(f"normals after best-fit gauge: mean angular error {angles.mean():.4f} deg")
