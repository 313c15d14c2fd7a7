"""Masked bilinear photometric factorization with a manifold constraint.

Each patch stack J (f x b) is factored as L @ N where rows of L are per-frame
4-vector lights (ambient + direction) and columns of N have the structure
rho * [1; n] with a unit normal n. Those columns form the quadric cone
head^2 = ||tail||^2, which the solver exploits twice: a closed-form gauge fix
(fit the symmetric matrix of the cone quadric, then eigendecompose) and an
exact cone parameterization c = [||t||; t] for Gauss-Newton column updates.

The outer iteration is safeguarded so the masked residual never increases:
candidate column updates and momentum extrapolations are only accepted where
they improve the objective.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .register import MIN_COLUMN_OBS, PatchStack

logger = logging.getLogger(__name__)

DEFAULT_NORMAL = np.array([0.0, 0.0, 1.0])


class UnderConstrainedError(ValueError):
    """Stack has too few usable frames or observations to factorize."""


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-8             # relative objective change
    abs_tol: float = 1e-11        # stop when residual <= abs_tol * ||D o J||^2
    max_iters: int = 300
    impute_iters: int = 60        # per rank step of the init completion
    repair_every: int = 10        # cadence of gauge-repair attempts
    max_restarts: int = 3
    gn_iters: int = 2             # inner cone Gauss-Newton steps per outer iter
    face_camera: bool = True      # pick the gauge with mean n_z > 0


@dataclass
class PhotometricFactors:
    """Per-patch lighting and surface factors plus the final masked residual."""

    lighting: np.ndarray          # (f, 4)
    surface: np.ndarray           # (4, b): row 0 albedo, rows 1:4 albedo * normal
    residual: float
    residual_history: np.ndarray = field(default_factory=lambda: np.empty(0))
    degenerate_columns: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def predicted(self) -> np.ndarray:
        return self.lighting @ self.surface

    def albedo(self) -> np.ndarray:
        return self.surface[0].copy()

    def normals(self) -> np.ndarray:
        """(3, b) unit normals; zero-albedo columns default to [0, 0, 1]."""
        rho = self.surface[0]
        tail = self.surface[1:]
        out = np.tile(DEFAULT_NORMAL[:, None], (1, self.surface.shape[1]))
        ok = rho > 1e-12
        out[:, ok] = tail[:, ok] / rho[ok]
        norms = np.linalg.norm(out, axis=0)
        good = norms > 1e-12
        out[:, good] /= norms[good]
        out[:, ~good] = DEFAULT_NORMAL[:, None]
        return out


def shade(light: np.ndarray, albedo: float, normal: np.ndarray) -> float:
    """Intensity of one pixel: light . (albedo * [1; n])."""
    light = np.asarray(light, dtype=float)
    normal = np.asarray(normal, dtype=float)
    if light.shape != (4,):
        raise ValueError(f"light must be a 4-vector, got shape {light.shape}")
    if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
        raise ValueError("normal must have unit length")
    if albedo < 0.0:
        raise ValueError("albedo must be non-negative")
    return float(light @ (albedo * np.concatenate([[1.0], normal])))


def project_manifold(column: np.ndarray) -> np.ndarray:
    """Nearest structured column rho * [1; n]: n from the normalized tail,
    rho = max(0, (head + ||tail||) / 2).

    A zero tail leaves the normal undefined; the result is then the
    albedo-only column [rho, 0, 0, 0].
    """
    col = np.asarray(column, dtype=float)
    if col.shape != (4,):
        raise ValueError(f"expected a 4-vector, got shape {col.shape}")
    head = col[0]
    tail = col[1:]
    tn = float(np.linalg.norm(tail))
    if tn <= 1e-300:
        # the nearest structured column is ill-defined without a normal;
        # keep the clamped head so re-projection is a fixed point
        return np.array([max(0.0, head), 0.0, 0.0, 0.0])
    rho = max(0.0, 0.5 * (head + tn))
    n = tail / tn
    return np.concatenate([[rho], rho * n])


def project_columns(x: np.ndarray) -> np.ndarray:
    """Column-wise manifold projection of a (4, b) matrix."""
    head = x[0]
    tail = x[1:]
    tn = np.linalg.norm(tail, axis=0)
    n = np.where(tn > 0, tail / np.maximum(tn, 1e-300), DEFAULT_NORMAL[:, None])
    rho = np.where(tn > 0, np.maximum(0.0, 0.5 * (head + tn)),
                   np.maximum(0.0, head))
    return np.vstack([rho, np.where(tn > 0, rho * n, 0.0)])


def masked_residual(J: np.ndarray, D: np.ndarray, L: np.ndarray, N: np.ndarray) -> float:
    return float(np.sum((D * (J - L @ N)) ** 2))


def _column_residuals(J, D, L, N):
    return np.sum((D * (J - L @ N)) ** 2, axis=0)


def _l_step(J, D, N):
    A = np.einsum('gi,ai,bi->gab', D, N, N)
    rhs = np.einsum('gi,ai,gi->ga', D, N, J)
    tr = np.trace(A, axis1=1, axis2=2)
    Areg = A + (1e-13 * np.maximum(tr, 1e-30))[:, None, None] * np.eye(4)
    return np.linalg.solve(Areg, rhs[:, :, None])[:, :, 0]


def _n_step_unconstrained(J, D, L, reg=1e-12):
    A = np.einsum('gi,ga,gb->iab', D, L, L)
    rhs = np.einsum('gi,ga,gi->ia', D, L, J)
    tr = np.trace(A, axis1=1, axis2=2)
    Areg = A + (reg * np.maximum(tr, 1e-30))[:, None, None] * np.eye(4)
    return np.linalg.solve(Areg, rhs[:, :, None])[:, :, 0].T


def _n_step_cone(J, D, L, T0, gn_iters):
    """Safeguarded batched Gauss-Newton on the cone chart c = [||t||; t]."""
    l0 = L[:, 0]
    Lt = L[:, 1:]
    T = T0.copy()
    eye3 = np.eye(3)

    def residual_cols(Tc):
        tn = np.linalg.norm(Tc, axis=0)
        pred = l0[:, None] * tn[None, :] + Lt @ Tc
        return np.sum((D * (J - pred)) ** 2, axis=0)

    r_cur = residual_cols(T)
    w_LL = np.einsum('gi,ga,gb->iab', D, Lt, Lt)
    w_lL = np.einsum('g,gi,ga->ia', l0, D, Lt)
    w_ll = np.einsum('g,gi,g->i', l0, D, l0)
    for _ in range(gn_iters):
        tn = np.maximum(np.linalg.norm(T, axis=0), 1e-300)
        nhat = T / tn
        pred = l0[:, None] * tn[None, :] + Lt @ T
        res = D * (J - pred)
        A = (w_ll[:, None, None] * np.einsum('ai,bi->iab', nhat, nhat)
             + np.einsum('ia,bi->iab', w_lL, nhat)
             + np.einsum('ia,bi->iba', w_lL, nhat)
             + w_LL)
        rhs = (np.einsum('gi,g->i', res, l0)[:, None] * nhat.T
               + np.einsum('gi,ga->ia', res, Lt))
        tr = np.trace(A, axis1=1, axis2=2)
        lam = 1e-10 * np.maximum(tr, 1e-30)
        stepped = False
        for _damp in range(6):
            try:
                dT = np.linalg.solve(A + lam[:, None, None] * eye3,
                                     rhs[:, :, None])[:, :, 0].T
            except np.linalg.LinAlgError:
                lam = lam * 10 + 1e-8
                continue
            T_new = T + dT
            r_new = residual_cols(T_new)
            improved = r_new <= r_cur
            if improved.any():
                T = np.where(improved[None, :], T_new, T)
                r_cur = np.where(improved, r_new, r_cur)
                stepped = True
                break
            lam = lam * 10
        if not stepped:
            break
    return T


def _hard_impute_stepped(J, D, rank=4, iters_per=60, tol=1e-10):
    """Rank-stepped SVD imputation: complete at rank 1, 2, ... warm-started."""
    colsum = (D * J).sum(axis=0)
    cnt = np.maximum(D.sum(axis=0), 1)
    Jf = np.where(D > 0, J, (colsum / cnt)[None, :])
    for r in range(1, rank + 1):
        prev = np.inf
        for _ in range(iters_per):
            U, s, Vt = np.linalg.svd(Jf, full_matrices=False)
            Jr = (U[:, :r] * s[:r]) @ Vt[:r]
            Jf = np.where(D > 0, J, Jr)
            cur = float(np.sum((D * (J - Jr)) ** 2))
            if prev >= cur and prev - cur <= tol * max(cur, 1e-300):
                break
            prev = cur
    U, s, Vt = np.linalg.svd(Jf, full_matrices=False)
    return U[:, :4] * s[:4], Vt[:4], float(np.sum((D * (J - (U[:, :4] * s[:4]) @ Vt[:4])) ** 2))


def _quadric_gauge(N):
    """Gauge G mapping factor columns onto the cone head^2 = ||tail||^2.

    Fits the symmetric S minimizing sum_i (c_i^T S c_i)^2 with ||S|| = 1 and
    factors S = G^T diag(1, -1, -1, -1) G through its eigendecomposition.
    Returns None when the required (+, -, -, -) signature does not emerge.
    """
    i, j = np.triu_indices(4)
    design = N[i] * N[j]
    design[i != j] *= 2.0
    design = design.T
    rn = np.linalg.norm(design, axis=1, keepdims=True)
    design = design / np.maximum(rn, 1e-300)
    try:
        _, _, Vt = np.linalg.svd(design, full_matrices=False)
    except np.linalg.LinAlgError:
        return None
    svec = Vt[-1]
    S = np.zeros((4, 4))
    S[i, j] = svec
    S[j, i] = svec
    w, V = np.linalg.eigh(S)
    if np.sum(w > 0) != 1:
        w, V = np.linalg.eigh(-S)
    if np.sum(w > 0) != 1:
        return None
    order = np.argsort(-w)
    return np.diag(np.sqrt(np.abs(w[order]))) @ V[:, order].T


def _gauge_candidate(L, N_unc):
    G = _quadric_gauge(N_unc)
    if G is None:
        return None
    try:
        Gi = np.linalg.inv(G)
    except np.linalg.LinAlgError:
        return None
    Ng = G @ N_unc
    if np.median(np.sign(Ng[0])) < 0:
        Ng = -Ng
        Gi = -Gi
    return L @ Gi, project_columns(Ng)


def _face_camera_gauge(L, N):
    """Mirror the normal z-components when most normals face away from the
    template viewpoint; the intensity product is unchanged."""
    rho = N[0]
    weight = np.sum(rho * N[3])
    if weight < 0.0:
        mirror = np.diag([1.0, 1.0, 1.0, -1.0])
        return L @ mirror, mirror @ N
    return L, N


def _polish(J, D, L, N, opts: SolverOptions, obs_norm):
    T = N[1:].copy()
    history = [masked_residual(J, D, L, N)]
    L_prev, T_prev = L.copy(), T.copy()
    beta = 0.5
    for it in range(opts.max_iters):
        L_old, T_old = L.copy(), T.copy()
        L = _l_step(J, D, N)
        # the cone step is internally safeguarded per column, so T never
        # worsens any column under the new L
        T = _n_step_cone(J, D, L, T, opts.gn_iters)
        N = np.vstack([np.linalg.norm(T, axis=0), T])
        cur = masked_residual(J, D, L, N)
        # momentum extrapolation, kept only when it helps
        L_m = L + beta * (L - L_prev)
        T_m = T + beta * (T - T_prev)
        N_m = np.vstack([np.linalg.norm(T_m, axis=0), T_m])
        r_m = masked_residual(J, D, L_m, N_m)
        if r_m < cur:
            L, T, N, cur = L_m, T_m, N_m, r_m
            beta = min(0.95, beta * 1.5)
        else:
            beta = max(0.3, beta * 0.5)
        if opts.repair_every and it % opts.repair_every == opts.repair_every - 1:
            X = _n_step_unconstrained(J, D, L)
            cand = _gauge_candidate(L, X)
            if cand is not None:
                Lg, Ng = cand
                Lg = _l_step(J, D, Ng)
                if masked_residual(J, D, Lg, Ng) < cur:
                    L, N = Lg, Ng
                    T = N[1:].copy()
                    cur = masked_residual(J, D, L, N)
        L_prev, T_prev = L_old, T_old
        history.append(cur)
        if cur <= opts.abs_tol * obs_norm:
            break
        if history[-2] - history[-1] <= opts.tol * max(history[-2], 1e-300):
            break
    return L, N, history


def solve_patch(
    stack: PatchStack,
    init: PhotometricFactors | None = None,
    opts: SolverOptions | None = None,
) -> PhotometricFactors:
    """Alternating minimization of ||D o (J - L N)||^2 with N on the manifold.

    Raises UnderConstrainedError for stacks with fewer than 4 usable frames,
    no column with enough observations, or no observations at all.
    """
    opts = opts or SolverOptions()
    J = np.asarray(stack.intensities, dtype=float)
    D = stack.observed.astype(float)
    f, b = J.shape
    n_obs = D.sum()
    if n_obs == 0:
        raise UnderConstrainedError("stack has no observed entries")
    usable_frames = int((D.sum(axis=1) > 0).sum())
    if f < 4 or usable_frames < 4:
        raise UnderConstrainedError(
            f"need at least 4 usable frames, have {usable_frames} of {f}"
        )
    if int((D.sum(axis=0) >= MIN_COLUMN_OBS).sum()) == 0:
        raise UnderConstrainedError(
            f"no template pixel is observed in >= {MIN_COLUMN_OBS} views"
        )

    obs_norm = max(float(np.sum((D * J) ** 2)), 1e-300)
    if init is not None:
        L0 = init.lighting.copy()
        N0 = project_columns(init.surface)
        L, N, history = _polish(J, D, L0, N0, opts, obs_norm)
    else:
        L_imp, N_unc, unc_res = _hard_impute_stepped(J, D, iters_per=opts.impute_iters)
        inits = []
        cand = _gauge_candidate(L_imp, N_unc)
        if cand is not None:
            inits.append(cand)
        inits.append((L_imp.copy(), project_columns(N_unc)))
        rng = np.random.default_rng(12345)
        for _ in range(max(opts.max_restarts - 1, 0)):
            R = np.linalg.qr(rng.normal(size=(4, 4)))[0]
            inits.append((L_imp @ R.T, project_columns(R @ N_unc)))
        # a basin is acceptable once it comes close to the unconstrained bound
        # (restarts are an escape hatch for catastrophic basins only)
        accept = max(30.0 * unc_res, 5e-7 * obs_norm)
        best = None
        for k, (L0, N0) in enumerate(inits):
            L, N, history = _polish(J, D, L0.copy(), N0.copy(), opts, obs_norm)
            if best is None or history[-1] < best[2][-1]:
                best = (L, N, history)
            if best[2][-1] <= accept:
                break
            if k + 1 >= max(opts.max_restarts, 1):
                break
        L, N, history = best
    if opts.face_camera:
        L, N = _face_camera_gauge(L, N)
    degenerate = np.flatnonzero(np.linalg.norm(N[1:], axis=0) <= 1e-12)
    return PhotometricFactors(
        lighting=L,
        surface=N,
        residual=history[-1],
        residual_history=np.asarray(history),
        degenerate_columns=degenerate,
    )
