"""Synthetic scenes with exact ground truth for end-to-end verification.

Scenes are analytic height fields over the xy-plane, imaged by pinhole
cameras on an arc under per-frame 4-vector lighting (ambient + direction).
Rendering follows the same shading model the solver assumes, except that the
direction term is clamped at zero in attached shadows (ambient survives), so
shadowed pixels drop below the dark threshold and become missing data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .decompose import ImageFrame

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# surface models
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PlaneSurface:
    """z = gx * x + gy * y + offset."""

    gx: float = 0.0
    gy: float = 0.0
    offset: float = 0.0
    kind: str = "plane"

    def height(self, x, y):
        return self.gx * x + self.gy * y + self.offset + 0.0 * x

    def gradient(self, x, y):
        shape = np.broadcast(x, y).shape
        return np.full(shape, self.gx), np.full(shape, self.gy)


@dataclass(frozen=True)
class SphereCapSurface:
    """Spherical cap of apex height ``cap_height`` over a rim of radius ``rim``."""

    rim: float = 1.0
    cap_height: float = 0.4
    kind: str = "sphere_cap"

    @property
    def sphere_radius(self) -> float:
        h, a = self.cap_height, self.rim
        return (a * a + h * h) / (2.0 * h)

    def height(self, x, y):
        r2 = x * x + y * y
        rad = self.sphere_radius
        inside = r2 < self.rim ** 2
        root = np.sqrt(np.maximum(rad * rad - r2, 0.0))
        return np.where(inside, root - (rad - self.cap_height), 0.0)

    def gradient(self, x, y):
        r2 = x * x + y * y
        rad = self.sphere_radius
        inside = r2 < self.rim ** 2
        root = np.sqrt(np.maximum(rad * rad - r2, 1e-12))
        gx = np.where(inside, -x / root, 0.0)
        gy = np.where(inside, -y / root, 0.0)
        return gx, gy


@dataclass(frozen=True)
class GaussianBumpsSurface:
    """Sum of Gaussian bumps (the potato stand-in)."""

    amplitudes: tuple = (0.3,)
    centers: tuple = ((0.0, 0.0),)
    sigmas: tuple = (0.5,)
    kind: str = "gaussian_bumps"

    def height(self, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        for a, (cx, cy), s in zip(self.amplitudes, self.centers, self.sigmas):
            z = z + a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * s * s))
        return z

    def gradient(self, x, y):
        gx = np.zeros(np.broadcast(x, y).shape)
        gy = np.zeros_like(gx)
        for a, (cx, cy), s in zip(self.amplitudes, self.centers, self.sigmas):
            e = a * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2.0 * s * s))
            gx = gx - e * (x - cx) / (s * s)
            gy = gy - e * (y - cy) / (s * s)
        return gx, gy


SURFACE_KINDS = {
    "plane": PlaneSurface,
    "sphere_cap": SphereCapSurface,
    "gaussian_bumps": GaussianBumpsSurface,
}


# --------------------------------------------------------------------------
# cameras
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    """Pinhole camera; image x is the column, y the row, z the view direction."""

    position: np.ndarray
    rotation: np.ndarray           # world -> camera, rows are the camera axes
    focal: float
    center: np.ndarray             # (cx, cy)
    image_shape: tuple[int, int]   # (h, w)

    def project(self, points3d: np.ndarray) -> np.ndarray:
        """(n, 3) world points -> (n, 2) pixel coordinates."""
        pc = (self.rotation @ (np.atleast_2d(points3d) - self.position).T)
        z = pc[2]
        if np.any(z <= 1e-9):
            raise ValueError("point behind the camera")
        return np.vstack([
            self.focal * pc[0] / z + self.center[0],
            self.focal * pc[1] / z + self.center[1],
        ]).T

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """World-space unit ray directions of all pixel centers, (h*w, 3)."""
        h, w = self.image_shape
        xs, ys = np.meshgrid(np.arange(w), np.arange(h))
        d = np.vstack([
            (xs.ravel() - self.center[0]) / self.focal,
            (ys.ravel() - self.center[1]) / self.focal,
            np.ones(h * w),
        ])
        d = self.rotation.T @ d
        d /= np.linalg.norm(d, axis=0)
        return np.broadcast_to(self.position[:, None], d.shape), d


def camera_looking_at(
    position: np.ndarray,
    target: np.ndarray,
    focal: float,
    image_shape: tuple[int, int],
) -> Camera:
    position = np.asarray(position, dtype=float)
    target = np.asarray(target, dtype=float)
    z_cam = target - position
    z_cam = z_cam / np.linalg.norm(z_cam)
    hint = np.array([0.0, 1.0, 0.0]) if abs(z_cam[2]) > 0.9 else np.array([0.0, 0.0, 1.0])
    x_cam = np.cross(z_cam, hint)
    x_cam = x_cam / np.linalg.norm(x_cam)
    y_cam = np.cross(z_cam, x_cam)
    rot = np.vstack([x_cam, y_cam, z_cam])
    h, w = image_shape
    return Camera(
        position=position,
        rotation=rot,
        focal=float(focal),
        center=np.array([(w - 1) / 2.0, (h - 1) / 2.0]),
        image_shape=(h, w),
    )


# --------------------------------------------------------------------------
# scene
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticScene:
    """Scene description: surface, footprint, cameras-on-arc and lights."""

    surface: object
    footprint: float = 1.0              # surface of interest: disk of this radius
    frame_count: int = 20
    arc_span_deg: float = 50.0
    camera_distance: float = 12.0
    camera_elevation_deg: float = 65.0  # angle above the xy-plane
    image_size: int = 200
    albedo: str = "uniform"             # "uniform" | "bands"
    albedo_scale: float = 0.9
    sparse_points: int = 60
    light_ambient: tuple = (0.0, 0.01)
    light_zenith_deg: tuple = (15.0, 55.0)
    light_strength: tuple = (0.75, 1.1)
    saturating_fraction: float = 0.0    # share of frames with boosted lights
    saturating_strength: tuple = (1.6, 2.2)
    noise_sigma: float = 0.0
    seed: int = 0

    def cameras(self) -> list[Camera]:
        cams = []
        half = np.radians(self.arc_span_deg) / 2.0
        elev = np.radians(self.camera_elevation_deg)
        angles = (np.linspace(-half, half, self.frame_count)
                  if self.frame_count > 1 else np.array([0.0]))
        focal = 0.42 * self.image_size * self.camera_distance / self.footprint
        for ang in angles:
            pos = self.camera_distance * np.array([
                np.sin(ang) * np.cos(elev),
                -np.cos(ang) * np.cos(elev),
                np.sin(elev),
            ])
            cams.append(camera_looking_at(
                pos, np.zeros(3), focal, (self.image_size, self.image_size)))
        return cams

    def lights(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed + 1)
        f = self.frame_count
        ambient = rng.uniform(*self.light_ambient, size=f)
        zen = np.radians(rng.uniform(*self.light_zenith_deg, size=f))
        azi = np.linspace(0.0, 2.0 * np.pi, f, endpoint=False) + rng.uniform(0, 0.3, f)
        strength = rng.uniform(*self.light_strength, size=f)
        n_hot = int(round(self.saturating_fraction * f))
        if n_hot:
            hot = rng.permutation(f)[:n_hot]
            strength[hot] = rng.uniform(*self.saturating_strength, size=n_hot)
        dirs = np.vstack([
            np.sin(zen) * np.cos(azi),
            np.sin(zen) * np.sin(azi),
            np.cos(zen),
        ]).T
        return np.hstack([ambient[:, None], strength[:, None] * dirs])

    def albedo_at(self, x, y):
        if self.albedo == "uniform":
            return np.full(np.broadcast(x, y).shape, self.albedo_scale)
        if self.albedo == "bands":
            return self.albedo_scale * (0.65 + 0.35 * np.sin(3.0 * x / self.footprint)
                                        * np.cos(2.0 * y / self.footprint))
        raise ValueError(f"unknown albedo model {self.albedo!r}")


@dataclass
class RenderResult:
    frames: list
    projections: np.ndarray        # (f, p, 2)
    sparse_points3d: np.ndarray    # (p, 3)
    truth_points: np.ndarray       # (n, 3) dense ground truth
    cameras: list
    lights: np.ndarray
    scene: SyntheticScene = field(repr=False, default=None)


def _sample_sparse_points(scene: SyntheticScene) -> np.ndarray:
    """Quasi-uniform sunflower sampling of the footprint plus a boundary ring."""
    p = scene.sparse_points
    n_ring = min(max(3, int(round(0.3 * p))), max(p - 1, 3))
    n_int = max(p - n_ring, 1)
    rng = np.random.default_rng(scene.seed + 2)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    k = np.arange(1, n_int + 1)
    r = scene.footprint * 0.94 * np.sqrt((k - 0.5) / n_int)
    th = k * golden + rng.uniform(0, 0.05, n_int)
    ring_th = np.linspace(0, 2 * np.pi, n_ring, endpoint=False) + rng.uniform(0, 0.02)
    xs = np.concatenate([r * np.cos(th), scene.footprint * np.cos(ring_th)])
    ys = np.concatenate([r * np.sin(th), scene.footprint * np.sin(ring_th)])
    zs = scene.surface.height(xs, ys)
    return np.vstack([xs, ys, zs]).T


def _intersect_rays(scene: SyntheticScene, origin, dirs):
    """Vectorized bisection of rays against z = h(x, y). Returns points + hit mask."""
    surf = scene.surface
    probe = np.linspace(-scene.footprint, scene.footprint, 64)
    px, py = np.meshgrid(probe, probe)
    z_samples = surf.height(px, py)
    span = float(np.ptp(z_samples))
    z_hi = float(z_samples.max()) + 0.05 * (span + 1e-3)
    z_lo = float(z_samples.min()) - 0.05 * (span + 1e-3)

    dz = dirs[2]
    going_down = dz < -1e-12
    t0 = np.where(going_down, (z_hi - origin[2]) / dz, np.nan)
    t1 = np.where(going_down, (z_lo - origin[2]) / dz, np.nan)

    def g(t):
        pt = origin[:, None] + t[None, :] * dirs
        return pt[2] - surf.height(pt[0], pt[1])

    lo, hi = t0.copy(), t1.copy()
    valid = going_down & (g(t0) > 0) & (g(t1) < 0)
    for _ in range(52):
        mid = 0.5 * (lo + hi)
        pos = g(mid) > 0
        lo = np.where(valid & pos, mid, lo)
        hi = np.where(valid & ~pos, mid, hi)
    t = 0.5 * (lo + hi)
    pts = origin[:, None] + t[None, :] * dirs
    in_foot = pts[0] ** 2 + pts[1] ** 2 <= scene.footprint ** 2
    return pts, valid & in_foot


def render(scene: SyntheticScene) -> RenderResult:
    """Render all frames plus the sparse/dense ground truth."""
    cams = scene.cameras()
    lights = scene.lights()
    sparse = _sample_sparse_points(scene)
    rng = np.random.default_rng(scene.seed + 3)

    frames = []
    projections = np.zeros((scene.frame_count, sparse.shape[0], 2))
    for g, cam in enumerate(cams):
        h, w = cam.image_shape
        origin, dirs = cam.pixel_rays()
        pts, hit = _intersect_rays(scene, cam.position, dirs)
        gx, gy = scene.surface.gradient(pts[0], pts[1])
        normal = np.vstack([-gx, -gy, np.ones_like(gx)])
        normal /= np.linalg.norm(normal, axis=0)
        rho = scene.albedo_at(pts[0], pts[1])
        l = lights[g]
        shad = np.maximum(l[1:] @ normal, 0.0)  # attached shadows: ambient survives
        intensity = rho * (l[0] + shad)
        if scene.noise_sigma > 0:
            intensity = intensity + rng.normal(0.0, scene.noise_sigma, intensity.shape)
        intensity = np.clip(np.where(hit, intensity, 0.0), 0.0, 1.0)
        frames.append(ImageFrame(pixels=intensity.reshape(h, w), frame_id=g))
        projections[g] = cam.project(sparse)

    grid = np.linspace(-scene.footprint, scene.footprint, 161)
    tx, ty = np.meshgrid(grid, grid)
    keep = tx ** 2 + ty ** 2 <= scene.footprint ** 2
    tz = scene.surface.height(tx, ty)
    truth = np.vstack([tx[keep], ty[keep], tz[keep]]).T
    return RenderResult(
        frames=frames,
        projections=projections,
        sparse_points3d=sparse,
        truth_points=truth,
        cameras=cams,
        lights=lights,
        scene=scene,
    )


# --------------------------------------------------------------------------
# error metric
# --------------------------------------------------------------------------

def _umeyama_similarity(src: np.ndarray, dst: np.ndarray):
    """Best-fit similarity (scale, rotation, translation) mapping src to dst."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cs = src - mu_s
    cd = dst - mu_d
    cov = cd.T @ cs / src.shape[0]
    U, s, Vt = np.linalg.svd(cov)
    sign = np.eye(3)
    if np.linalg.det(U @ Vt) < 0:
        sign[2, 2] = -1.0
    R = U @ sign @ Vt
    var = np.mean(np.sum(cs ** 2, axis=1))
    scale = float(np.trace(np.diag(s) @ sign) / max(var, 1e-300))
    t = mu_d - scale * R @ mu_s
    return scale, R, t


def error_3d(
    reconstruction: np.ndarray,
    truth_points: np.ndarray,
    icp_iters: int = 10,
) -> float:
    """Mean point-to-truth distance after best-fit similarity alignment,
    as a percentage of the truth bounding-box diagonal."""
    rec = np.asarray(reconstruction, dtype=float)
    truth = np.asarray(truth_points, dtype=float)
    if rec.ndim != 2 or rec.shape[1] != 3 or rec.shape[0] == 0:
        raise ValueError("reconstruction must be a non-empty (n, 3) array")
    if truth.shape[0] == 0:
        raise ValueError("empty truth point set")
    finite = np.isfinite(rec).all(axis=1)
    rec = rec[finite]
    if rec.shape[0] == 0:
        raise ValueError("no finite reconstruction points overlap the truth")
    tree = cKDTree(truth)
    cur = rec.copy()
    for _ in range(icp_iters):
        dist, idx = tree.query(cur)
        scale, R, t = _umeyama_similarity(cur, truth[idx])
        nxt = scale * (R @ cur.T).T + t
        if np.max(np.linalg.norm(nxt - cur, axis=1)) < 1e-12:
            cur = nxt
            break
        cur = nxt
    dist, _ = tree.query(cur)
    diag = float(np.linalg.norm(truth.max(axis=0) - truth.min(axis=0)))
    return float(dist.mean()) / max(diag, 1e-300) * 100.0


# --------------------------------------------------------------------------
# scene (de)serialization
# --------------------------------------------------------------------------

def scene_to_dict(scene: SyntheticScene) -> dict:
    surf = scene.surface
    d = {k: v for k, v in vars(surf).items()}
    out = {
        "surface": d,
        "footprint": scene.footprint,
        "frame_count": scene.frame_count,
        "arc_span_deg": scene.arc_span_deg,
        "camera_distance": scene.camera_distance,
        "camera_elevation_deg": scene.camera_elevation_deg,
        "image_size": scene.image_size,
        "albedo": scene.albedo,
        "albedo_scale": scene.albedo_scale,
        "sparse_points": scene.sparse_points,
        "light_ambient": list(scene.light_ambient),
        "light_zenith_deg": list(scene.light_zenith_deg),
        "light_strength": list(scene.light_strength),
        "saturating_fraction": scene.saturating_fraction,
        "noise_sigma": scene.noise_sigma,
        "seed": scene.seed,
    }
    return out


def scene_from_dict(data: dict) -> SyntheticScene:
    surf_data = dict(data["surface"])
    kind = surf_data.pop("kind")
    if kind not in SURFACE_KINDS:
        raise ValueError(f"unknown surface kind {kind!r}")
    for key in ("amplitudes", "sigmas"):
        if key in surf_data:
            surf_data[key] = tuple(surf_data[key])
    if "centers" in surf_data:
        surf_data["centers"] = tuple(tuple(c) for c in surf_data["centers"])
    surface = SURFACE_KINDS[kind](**surf_data)
    kwargs = {k: v for k, v in data.items() if k != "surface"}
    for key in ("light_ambient", "light_zenith_deg", "light_strength"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return SyntheticScene(surface=surface, **kwargs)
