"""Least-squares integration of per-pixel normals into a height field.

Gradients p = -nx/nz and q = -ny/nz are integrated over the rectangular
bounding box of the template raster. The default backend projects onto the
integrable subspace in the frequency domain (cosine basis, which solves the
discrete normal equations of the forward-difference gradient operator
exactly). A masked sparse Poisson solve is available as an alternative that
never touches pixels outside the template pixel set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.fft import dctn, idctn

from .register import PatchStack
from .solver import PhotometricFactors

NZ_MIN = 0.05


@dataclass(frozen=True)
class HeightField:
    """Integrated surface of one patch in template coordinates.

    ``z_grid`` covers the full template bounding box (needed for sampling);
    the surface proper lives on ``pixel_index_set``. Elevations are zero-mean
    over that set.
    """

    z_grid: np.ndarray              # (rows, cols), template pixel units scaled by pitch
    pixel_index_set: np.ndarray     # flat indices of the patch pixels
    origin: np.ndarray              # (2,) physical coords of raster pixel (0, 0)
    pitch: float
    triangle_id: int
    clamped_fraction: float = 0.0   # share of pixels with n_z at the clamp

    @property
    def shape(self) -> tuple[int, int]:
        return self.z_grid.shape

    def pixel_coords(self) -> np.ndarray:
        """(2, b) physical template coordinates of the patch pixels."""
        rows, cols = np.divmod(self.pixel_index_set, self.shape[1])
        return self.origin[:, None] + self.pitch * np.vstack([cols, rows]).astype(float)

    def points(self) -> np.ndarray:
        """(3, b) template-frame surface points (x, y, z)."""
        xy = self.pixel_coords()
        z = self.z_grid.ravel()[self.pixel_index_set]
        return np.vstack([xy, z])

    def sample(self, points2d: np.ndarray) -> np.ndarray:
        """Bilinear z at (2, n) physical template coordinates (clamped)."""
        rows, cols = self.shape
        x = (points2d[0] - self.origin[0]) / self.pitch
        y = (points2d[1] - self.origin[1]) / self.pitch
        x = np.clip(x, 0.0, cols - 1.0)
        y = np.clip(y, 0.0, rows - 1.0)
        x0 = np.floor(x).astype(int)
        y0 = np.floor(y).astype(int)
        x1 = np.minimum(x0 + 1, cols - 1)
        y1 = np.minimum(y0 + 1, rows - 1)
        fx = x - x0
        fy = y - y0
        z = self.z_grid
        return (z[y0, x0] * (1 - fx) * (1 - fy) + z[y0, x1] * fx * (1 - fy)
                + z[y1, x0] * (1 - fx) * fy + z[y1, x1] * fx * fy)


def integrate_gradients_dct(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Least-squares surface whose forward differences match (p, q).

    Solves (Dx^T Dx + Dy^T Dy) z = Dx^T p + Dy^T q through the cosine basis
    that diagonalizes the Neumann Laplacian; exact for integrable fields
    (planes reintegrate to machine precision). Gauge: zero mean.
    """
    rows, cols = p.shape
    if q.shape != p.shape:
        raise ValueError("gradient components must share a shape")
    b = np.zeros((rows, cols))
    # Dx^T p: forward differences act along columns (x = col index)
    b[:, :-1] -= p[:, :-1]
    b[:, 1:] += p[:, :-1]
    # Dy^T q: along rows
    b[:-1, :] -= q[:-1, :]
    b[1:, :] += q[:-1, :]
    bt = dctn(b, norm="ortho")
    u = np.arange(rows)
    v = np.arange(cols)
    denom = (4.0 * np.sin(np.pi * u / (2.0 * rows))[:, None] ** 2
             + 4.0 * np.sin(np.pi * v / (2.0 * cols))[None, :] ** 2)
    denom[0, 0] = 1.0
    zt = bt / denom
    zt[0, 0] = 0.0
    z = idctn(zt, norm="ortho")
    return z - z.mean()


def fill_gradients_by_diffusion(grad: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Harmonic fill of off-mask gradient values from the mask boundary.

    Solves a Laplace equation on the off-mask pixels with the in-mask values
    as Dirichlet data (mirror boundary at the box edge).
    """
    rows, cols = grad.shape
    out = grad.copy()
    off = ~mask
    n_off = int(off.sum())
    if n_off == 0:
        return out
    if not mask.any():
        return np.zeros_like(grad)
    index = -np.ones((rows, cols), dtype=int)
    index[off] = np.arange(n_off)
    rows_i, cols_i = np.nonzero(off)
    data, ii, jj = [], [], []
    rhs = np.zeros(n_off)
    diag = np.zeros(n_off)
    for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        rr = rows_i + dr
        cc = cols_i + dc
        valid = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
        diag += valid  # mirror boundary: absent neighbors drop out
        vr, vc = rr[valid], cc[valid]
        src = np.flatnonzero(valid)
        neighbor_off = off[vr, vc]
        # off-mask neighbors couple; in-mask neighbors feed the rhs
        ii.extend(index[rows_i[src[neighbor_off]], cols_i[src[neighbor_off]]])
        jj.extend(index[vr[neighbor_off], vc[neighbor_off]])
        data.extend([-1.0] * int(neighbor_off.sum()))
        inm = ~neighbor_off
        np.add.at(rhs, index[rows_i[src[inm]], cols_i[src[inm]]], grad[vr[inm], vc[inm]])
    lap = sp.csr_matrix(
        (np.concatenate([diag, np.asarray(data)]),
         (np.concatenate([np.arange(n_off), np.asarray(ii)]),
          np.concatenate([np.arange(n_off), np.asarray(jj)]))),
        shape=(n_off, n_off),
    )
    out[off] = spla.spsolve(lap.tocsc(), rhs)
    return out


def integrate_gradients_masked(p: np.ndarray, q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked least-squares integration (sparse Poisson solve on the mask).

    Only forward differences whose two endpoints are inside the mask
    constrain the surface; pixels outside the mask are returned as 0.
    """
    return _integrate_masked(p, q, np.asarray(mask, dtype=bool))


def integrate_normals(
    factors: PhotometricFactors,
    stack: PatchStack,
    backend: str = "dct",
    nz_min: float = NZ_MIN,
) -> HeightField:
    """Integrate the recovered normals of one patch into a height field."""
    if stack.pixel_count == 0:
        raise ValueError("empty normal field")
    normals = factors.normals()
    rows, cols = stack.template_shape
    mask = np.zeros(rows * cols, dtype=bool)
    mask[stack.template_pixels] = True
    mask = mask.reshape(rows, cols)

    nz = normals[2].copy()
    clamped = nz < nz_min
    nz[clamped] = nz_min
    # gradients in raster-pixel units: dz/dpixel = physical gradient * pitch
    pitch = stack.grid.pitch
    p = np.zeros((rows, cols))
    q = np.zeros((rows, cols))
    p.ravel()[stack.template_pixels] = -normals[0] / nz * pitch
    q.ravel()[stack.template_pixels] = -normals[1] / nz * pitch

    if backend == "dct":
        p_full = fill_gradients_by_diffusion(np.where(mask, p, 0.0), mask)
        q_full = fill_gradients_by_diffusion(np.where(mask, q, 0.0), mask)
        z = integrate_gradients_dct(*_edge_midpoint(p_full, q_full))
    elif backend == "poisson":
        z = _integrate_masked(*_edge_midpoint(p, q), mask)
    else:
        raise ValueError(f"unknown integration backend {backend!r}")

    z = z - z.ravel()[stack.template_pixels].mean()
    return HeightField(
        z_grid=z,
        pixel_index_set=stack.template_pixels.copy(),
        origin=stack.grid.origin.copy(),
        pitch=pitch,
        triangle_id=stack.triangle_id,
        clamped_fraction=float(clamped.mean()),
    )


def _edge_midpoint(p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average node-sampled gradients onto the forward-difference edges.

    The discrete constraint z(j+1) - z(j) = p approximates dz/dx at the edge
    midpoint; averaging the two node samples there removes the half-pixel
    bias on curved fields while leaving constant fields untouched.
    """
    p_mid = p.copy()
    q_mid = q.copy()
    p_mid[:, :-1] = 0.5 * (p[:, :-1] + p[:, 1:])
    q_mid[:-1, :] = 0.5 * (q[:-1, :] + q[1:, :])
    return p_mid, q_mid


def _integrate_masked(p: np.ndarray, q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    rows, cols = p.shape
    idx = -np.ones((rows, cols), dtype=int)
    n_pix = int(mask.sum())
    idx[mask] = np.arange(n_pix)
    eq_i, eq_j, eq_v, rhs = [], [], [], []
    eq = 0
    # x edges: z[r, c+1] - z[r, c] = p[r, c]
    rr, cc = np.nonzero(mask[:, :-1] & mask[:, 1:])
    for r, c in zip(rr, cc):
        eq_i += [eq, eq]
        eq_j += [idx[r, c + 1], idx[r, c]]
        eq_v += [1.0, -1.0]
        rhs.append(p[r, c])
        eq += 1
    # y edges: z[r+1, c] - z[r, c] = q[r, c]
    rr, cc = np.nonzero(mask[:-1, :] & mask[1:, :])
    for r, c in zip(rr, cc):
        eq_i += [eq, eq]
        eq_j += [idx[r + 1, c], idx[r, c]]
        eq_v += [1.0, -1.0]
        rhs.append(q[r, c])
        eq += 1
    if eq == 0:
        return np.zeros_like(p)
    A = sp.csr_matrix((eq_v, (eq_i, eq_j)), shape=(eq, n_pix))
    # gauge: zero mean over the mask
    gauge = sp.csr_matrix((np.ones(n_pix) / n_pix, (np.zeros(n_pix), np.arange(n_pix))),
                          shape=(1, n_pix))
    system = sp.vstack([A, gauge]).tocsc()
    rhs = np.concatenate([np.asarray(rhs), [0.0]])
    z_vals = spla.lsqr(system, rhs, atol=1e-14, btol=1e-14, iter_lim=20000)[0]
    z = np.zeros_like(p)
    z[mask] = z_vals
    return z
