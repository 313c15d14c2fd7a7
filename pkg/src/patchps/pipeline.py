"""End-to-end orchestration: mesh, patches, per-patch solves, assembly.

Patch jobs (solve + integrate + curvature) are independent and run on a
worker pool, largest stacks first; every aggregation step iterates patches in
sorted order so results do not depend on worker count or completion order.
Stage outputs are cached to the output directory for debugging and re-runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import io as pio
from .align import (
    anchor_to_corners,
    apply_correction,
    lift_to_facet,
    overlap_correspondences,
    patch_curvature,
    solve_corrections,
)
from .decompose import ImageFrame, rasterize_mask
from .geometry import CoarseMesh, build_mesh, enlarge_triangle, facet_frame, signed_area
from .integration import HeightField, integrate_normals
from .refine import DenseSurface, refine, superpose
from .register import (
    PatchStack,
    TemplateGrid,
    assemble_stack,
    make_template_grid,
    missing_fraction,
    register_patch,
)
from .solver import PhotometricFactors, SolverOptions, UnderConstrainedError, solve_patch
from .synthetic import RenderResult, SyntheticScene, error_3d, render, scene_from_dict

logger = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Configuration of one reconstruction run."""

    scene_file: str | None = None
    image_files: list[str] = field(default_factory=list)
    sparse_file: str | None = None
    output_dir: str | None = None
    reference_view: int | None = None
    enlarge_factor: float = 1.3
    tau_dark: float = 0.02
    tau_sat: float = 0.98
    # patch stacks from real registrations carry interpolation/model noise, so
    # the pipeline stops the solver at a looser relative-change tolerance
    solver_tol: float = 1e-4
    solver_max_iters: int = 300
    lambda_refine: float = 10.0
    refine_tol: float = 1e-8
    refine_max_iters: int = 500
    r_pair: float | None = None
    align_variant: str = "tikhonov"
    # near-planar patches leave the correction weakly determined; the
    # pipeline pulls them toward identity harder than the bare op default
    align_damping: float = 0.3
    integrate_backend: str = "dct"
    max_template_px: int = 64
    workers: int = 1
    seed: int = 0
    resume: bool = False
    save_debug_stacks: bool = False

    def validate(self) -> None:
        if not 0.0 <= self.tau_dark < self.tau_sat <= 1.0:
            raise ValueError("need 0 <= tau_dark < tau_sat <= 1")
        if self.enlarge_factor < 1.0:
            raise ValueError("enlargement factor must be >= 1")
        if self.workers < 1:
            raise ValueError("worker count must be >= 1")
        if self.lambda_refine <= 0:
            raise ValueError("lambda must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        data = pio.read_json(path)
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def fingerprint(self) -> str:
        """Hash of the result-affecting configuration.

        Volatile fields (worker count, output paths, resume, debug dumps) do
        not change the reconstruction, so runs differing only in those share
        cached stage outputs.
        """
        data = asdict(self)
        for key in ("workers", "output_dir", "resume", "save_debug_stacks"):
            data.pop(key, None)
        blob = json.dumps(data, sort_keys=True, default=str)
        return hashlib.sha1(blob.encode()).hexdigest()[:16]


@dataclass
class RunReport:
    """Per-run statistics in the style of the quantitative results table."""

    mesh_points: int = 0
    triangle_count: int = 0
    total_pixels: int = 0
    missing_percent: float = 0.0
    total_seconds: float = 0.0
    error_3d_percent: float | None = None
    stage_seconds: dict = field(default_factory=dict)
    patch_records: list = field(default_factory=list)
    failed_patches: list = field(default_factory=list)
    alignment_pre_rms: float = 0.0
    alignment_post_rms: float = 0.0
    refine_energy: float = 0.0
    seed: int = 0
    workers: int = 1
    config_fingerprint: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        lines = [
            "reconstruction report",
            "---------------------",
            f"mesh points      : {self.mesh_points}",
            f"triangles        : {self.triangle_count}",
            f"pixels           : {self.total_pixels}",
            f"missing pixels   : {self.missing_percent:.2f}%",
            f"total time       : {self.total_seconds:.2f} s",
        ]
        if self.error_3d_percent is not None:
            lines.append(f"3d error         : {self.error_3d_percent:.2f}%")
        lines.append(f"alignment gap rms: {self.alignment_pre_rms:.3e} -> "
                     f"{self.alignment_post_rms:.3e}")
        lines.append(f"refine energy    : {self.refine_energy:.6e}")
        lines.append(f"seed / workers   : {self.seed} / {self.workers}")
        if self.failed_patches:
            lines.append(f"failed patches   : {self.failed_patches}")
        lines.append("stage seconds:")
        for k, v in self.stage_seconds.items():
            lines.append(f"  {k:<12s} {v:8.2f}")
        return "\n".join(lines)


@dataclass
class PatchResult:
    triangle_id: int
    factors: PhotometricFactors
    height_field: HeightField
    curvature: float
    status: str = "ok"


def _patch_job(args) -> tuple[int, object, str]:
    """Worker: solve one stack, integrate, measure curvature."""
    tri, stack, opts, backend = args
    try:
        factors = solve_patch(stack, opts=opts)
        hf = integrate_normals(factors, stack, backend=backend)
        curv = patch_curvature(hf)
        return tri, PatchResult(tri, factors, hf, curv), "ok"
    except UnderConstrainedError as exc:
        return tri, None, f"under-constrained: {exc}"


def build_patch_stacks(
    frames: list[ImageFrame],
    mesh: CoarseMesh,
    enlarge_factor: float = 1.3,
    tau_dark: float = 0.02,
    tau_sat: float = 0.98,
    max_template_px: int = 64,
) -> tuple[dict[int, PatchStack], dict[int, object]]:
    """Decompose and register every (frame, triangle) pair into patch stacks.

    Returns (stacks, facet frames). Back-facing projections are detected by a
    winding flip relative to the reference view and yield unobserved rows.
    """
    ref_view = mesh.reference_view
    shape = frames[0].shape
    stacks: dict[int, PatchStack] = {}
    facet_frames: dict[int, object] = {}
    for tri in range(mesh.triangle_count):
        base3d = mesh.triangle_vertices3d(tri)
        enlarged3d = enlarge_triangle(base3d, enlarge_factor)
        fr = facet_frame(enlarged3d)
        base_template = (fr.rotation @ base3d)[:2]
        ref_sign = np.sign(signed_area(mesh.triangle_projection(ref_view, tri)))

        masks = []
        sources = []
        max_pixels = 0
        for g in range(mesh.frame_count):
            verts = mesh.triangle_projection(g, tri)
            back = False
            if np.isfinite(verts).all():
                area = signed_area(verts)
                back = np.sign(area) != ref_sign or abs(area) < 1e-9
                src = enlarge_triangle(verts, enlarge_factor) if not back else verts
            else:
                back = True
                src = verts
            mask = rasterize_mask(src, shape, triangle_id=tri, frame_id=g,
                                  back_facing=back)
            masks.append(mask)
            sources.append(src)
            max_pixels = max(max_pixels, mask.pixel_count)
        if max_pixels == 0:
            logger.warning("triangle %d is out of view in every frame", tri)
            continue
        grid = make_template_grid(fr.template2d, base_template,
                                  target_pixels=max_pixels, max_side=max_template_px)
        rows = np.zeros((mesh.frame_count, grid.pixel_count))
        observed = np.zeros((mesh.frame_count, grid.pixel_count), dtype=bool)
        for g in range(mesh.frame_count):
            if masks[g].out_of_view:
                continue
            rows[g], observed[g] = register_patch(frames[g], masks[g], sources[g], grid)
        stacks[tri] = assemble_stack(rows, observed, grid, tri,
                                     tau_dark=tau_dark, tau_sat=tau_sat)
        facet_frames[tri] = fr
    return stacks, facet_frames


def _solve_all_patches(
    stacks: dict[int, PatchStack],
    opts: SolverOptions,
    backend: str,
    workers: int,
) -> tuple[dict[int, PatchResult], list[tuple[int, str]]]:
    jobs = [(tri, stacks[tri], opts, backend) for tri in
            sorted(stacks, key=lambda t: (-stacks[t].pixel_count, t))]
    results: dict[int, PatchResult] = {}
    failures: list[tuple[int, str]] = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_patch_job, jobs, chunksize=1))
    else:
        outputs = [_patch_job(job) for job in jobs]
    for tri, result, status in outputs:
        if status == "ok":
            results[tri] = result
        else:
            failures.append((tri, status))
    return results, sorted(failures)


def run_pipeline(
    config: PipelineConfig,
    prerendered: RenderResult | None = None,
) -> tuple[DenseSurface, RunReport]:
    """Execute the full reconstruction and write outputs/report.

    Failed (under-constrained) patches are excluded and listed in the report;
    the pipeline continues with the remaining patches.
    """
    config.validate()
    t_start = time.perf_counter()
    report = RunReport(seed=config.seed, workers=config.workers,
                       config_fingerprint=config.fingerprint())
    outdir = Path(config.output_dir) if config.output_dir else None
    if outdir:
        outdir.mkdir(parents=True, exist_ok=True)

    def stage(name):
        class _Timer:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()
            def __exit__(self_inner, *exc):
                report.stage_seconds[name] = (
                    report.stage_seconds.get(name, 0.0)
                    + time.perf_counter() - self_inner.t0)
        return _Timer()

    # ---- ingest -----------------------------------------------------------
    truth_points = None
    with stage("ingest"):
        if prerendered is not None:
            rendered = prerendered
            frames = rendered.frames
            points3d, projections = rendered.sparse_points3d, rendered.projections
            truth_points = rendered.truth_points
        elif config.scene_file:
            scene = scene_from_dict(pio.read_json(config.scene_file))
            rendered = render(scene)
            frames = rendered.frames
            points3d, projections = rendered.sparse_points3d, rendered.projections
            truth_points = rendered.truth_points
        else:
            if not config.image_files or not config.sparse_file:
                raise ValueError("config needs a scene file or images + sparse file")
            frames = [ImageFrame(pixels=pio.load_image(p), frame_id=i)
                      for i, p in enumerate(config.image_files)]
            points3d, projections = pio.read_sparse_points(config.sparse_file)
            if projections.shape[0] != len(frames):
                raise ValueError("sparse file frame count does not match image count")

    # ---- mesh -------------------------------------------------------------
    with stage("mesh"):
        mesh = build_mesh(points3d, projections, config.reference_view)
    report.mesh_points = mesh.point_count
    report.triangle_count = mesh.triangle_count

    # ---- decompose + register ---------------------------------------------
    cache_tag = config.fingerprint()
    stacks = facet_frames = None
    stack_cache = outdir / "stage_stacks.npz" if outdir else None
    if config.resume and stack_cache and stack_cache.exists():
        stacks, facet_frames = _load_stack_cache(stack_cache, cache_tag)
    if stacks is None:
        with stage("register"):
            stacks, facet_frames = build_patch_stacks(
                frames, mesh,
                enlarge_factor=config.enlarge_factor,
                tau_dark=config.tau_dark, tau_sat=config.tau_sat,
                max_template_px=config.max_template_px)
        if stack_cache:
            _save_stack_cache(stack_cache, cache_tag, stacks, facet_frames)
    if not stacks:
        raise RuntimeError("no usable patches")
    if config.save_debug_stacks and outdir:
        _dump_debug_stacks(outdir / "stacks", frames, mesh, stacks, config)

    report.total_pixels = int(sum(s.intensities.size for s in stacks.values()))
    observed_total = int(sum(s.observed.sum() for s in stacks.values()))
    report.missing_percent = 100.0 * (1.0 - observed_total / max(report.total_pixels, 1))

    # ---- per-patch photometric solve + integration -------------------------
    opts = SolverOptions(tol=config.solver_tol, max_iters=config.solver_max_iters)
    with stage("solve"):
        results, failures = _solve_all_patches(
            stacks, opts, config.integrate_backend, config.workers)
    report.failed_patches = [f"{tri}: {msg}" for tri, msg in failures]
    for tri in sorted(results):
        res = results[tri]
        report.patch_records.append({
            "triangle": tri,
            "pixels": stacks[tri].pixel_count,
            "missing_fraction": missing_fraction(stacks[tri]),
            "residual": res.factors.residual,
            "iterations": int(res.factors.residual_history.size - 1),
            "clamped_fraction": res.height_field.clamped_fraction,
        })
    if not results:
        raise RuntimeError("no patch could be solved")

    # ---- anchor + lift + align --------------------------------------------
    with stage("align"):
        sets = {}
        curvatures = {}
        for tri in sorted(results):
            res = results[tri]
            base3d = mesh.triangle_vertices3d(tri)
            fr = facet_frames[tri]
            corners_xy = (fr.rotation @ base3d)[:2]
            anchored = anchor_to_corners(res.height_field, corners_xy)
            enlarged3d = enlarge_triangle(base3d, config.enlarge_factor)
            sets[tri] = lift_to_facet(anchored, fr, enlarged3d, base3d,
                                      vertex_ids=mesh.triangles[tri])
            curvatures[tri] = res.curvature
        pairings = {}
        for ta, tb in mesh.shared_edge_pairs():
            if ta in sets and tb in sets:
                pairings[(ta, tb)] = overlap_correspondences(
                    sets[ta], sets[tb], config.r_pair)
        corrections, align_report = solve_corrections(
            sets, mesh, curvatures, r_pair=config.r_pair,
            variant=config.align_variant, pairings=pairings,
            damping=config.align_damping)
        corrected = {tri: apply_correction(sets[tri], corrections[tri])
                     for tri in sorted(sets)}
    report.alignment_pre_rms = align_report.pre_rms
    report.alignment_post_rms = align_report.post_rms

    # ---- superpose + refine -------------------------------------------------
    with stage("refine"):
        raw = superpose(corrected, pairings)
        dense = refine(raw, mesh, lam=config.lambda_refine,
                       tol=config.refine_tol, max_iters=config.refine_max_iters)
    report.refine_energy = dense.energy

    # ---- metrics + outputs ---------------------------------------------------
    with stage("report"):
        per_point_error = None
        if truth_points is not None:
            report.error_3d_percent = error_3d(dense.points, truth_points)
            from scipy.spatial import cKDTree
            per_point_error, _ = cKDTree(truth_points).query(dense.points)
        if outdir:
            pio.write_point_cloud_ply(outdir / "surface.ply", dense.points,
                                      per_point_error)
            verts, faces = pio.grid_mesh(dense)
            if faces.size:
                pio.write_mesh_obj(outdir / "surface.obj", verts, faces)
            if per_point_error is not None:
                pio.write_heatmap(outdir / "error_heatmap.png", dense, per_point_error)
            pio.write_json(outdir / "solver_trace.json", {
                str(tri): results[tri].factors.residual_history.tolist()
                for tri in sorted(results)})
            pio.write_json(outdir / "alignment_report.json", {
                "pre_rms": align_report.pre_rms,
                "post_rms": align_report.post_rms,
                "k_value": align_report.k_value,
                "pinned": align_report.pinned,
                "components": align_report.components,
                "edges": [
                    {"triangles": [a, b], "pre_rms": pre, "post_rms": post}
                    for a, b, pre, post in align_report.edge_stats],
            })
    report.total_seconds = time.perf_counter() - t_start
    if outdir:
        pio.write_json(outdir / "report.json", report.to_dict())
        (outdir / "report.txt").write_text(report.to_text() + "\n", encoding="utf-8")
    logger.info("pipeline done: %d patches, %.2f s", len(results), report.total_seconds)
    return dense, report


# --------------------------------------------------------------------------
# caching helpers
# --------------------------------------------------------------------------

def _save_stack_cache(path, tag, stacks, facet_frames):
    payload = {"tag": np.array(tag)}
    for tri, st in stacks.items():
        payload[f"i_{tri}"] = st.intensities
        payload[f"o_{tri}"] = st.observed
        payload[f"tp_{tri}"] = st.template_pixels
        payload[f"shape_{tri}"] = np.array(st.template_shape)
        payload[f"gv_{tri}"] = st.grid.vertices2d
        payload[f"gb_{tri}"] = st.grid.base_vertices2d
        payload[f"go_{tri}"] = st.grid.origin
        payload[f"gp_{tri}"] = np.array(st.grid.pitch)
        fr = facet_frames[tri]
        payload[f"fr_{tri}"] = fr.rotation
        payload[f"fn_{tri}"] = fr.facet_normal
        payload[f"ft_{tri}"] = fr.template2d
    np.savez_compressed(path, **payload)


def _load_stack_cache(path, tag):
    from .geometry import FacetFrame

    data = np.load(path, allow_pickle=False)
    if str(data["tag"]) != tag:
        return None, None
    stacks = {}
    frames = {}
    tris = sorted({int(k.split("_")[1]) for k in data.files if k.startswith("i_")})
    for tri in tris:
        shape = tuple(int(v) for v in data[f"shape_{tri}"])
        grid = TemplateGrid(
            vertices2d=data[f"gv_{tri}"],
            base_vertices2d=data[f"gb_{tri}"],
            origin=data[f"go_{tri}"],
            pitch=float(data[f"gp_{tri}"]),
            shape=shape,
            pixel_index_set=data[f"tp_{tri}"],
        )
        stacks[tri] = PatchStack(
            intensities=data[f"i_{tri}"],
            observed=data[f"o_{tri}"].astype(bool),
            template_pixels=data[f"tp_{tri}"],
            template_shape=shape,
            triangle_id=tri,
            grid=grid,
        )
        frames[tri] = FacetFrame(
            rotation=data[f"fr_{tri}"],
            facet_normal=data[f"fn_{tri}"],
            template2d=data[f"ft_{tri}"],
        )
    logger.info("loaded %d cached patch stacks", len(stacks))
    return stacks, frames


def _dump_debug_stacks(dirpath, frames, mesh, stacks, config):
    """Per-triangle registered stack images; unobserved pixels render as 0.5."""
    dirpath.mkdir(parents=True, exist_ok=True)
    for tri in sorted(stacks):
        st = stacks[tri]
        rows, cols = st.template_shape
        sheet = np.full((rows, cols * st.frame_count), 0.5)
        for g in range(st.frame_count):
            img = np.full(rows * cols, 0.5)
            img[st.template_pixels[st.observed[g]]] = st.intensities[g][st.observed[g]]
            sheet[:, g * cols:(g + 1) * cols] = img.reshape(rows, cols)
        pio.save_image(dirpath / f"triangle_{tri:04d}.png", sheet)


# --------------------------------------------------------------------------
# piecewise vs global benchmark
# --------------------------------------------------------------------------

@dataclass
class BenchReport:
    patches: int
    global_seconds: float
    piecewise_seconds: float
    global_error_percent: float
    piecewise_error_percent: float
    global_residual: float
    piecewise_mean_residual: float

    @property
    def speedup(self) -> float:
        return self.global_seconds / max(self.piecewise_seconds, 1e-12)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["speedup"] = self.speedup
        return d


def benchmark_piecewise_vs_global(
    scene: SyntheticScene,
    config: PipelineConfig | None = None,
) -> BenchReport:
    """Solve the same static-view stack globally and piecewise, report both.

    The global path treats the whole projected mesh region as one masked
    bilinear problem followed by one integration; the piecewise path is the
    standard pipeline on identical frames.
    """
    import dataclasses as _dc

    static_scene = _dc.replace(scene, arc_span_deg=0.0)
    rendered = render(static_scene)
    config = config or PipelineConfig()
    config.validate()

    mesh = build_mesh(rendered.sparse_points3d, rendered.projections,
                      config.reference_view)
    if mesh.triangle_count < 4:
        raise ValueError("scene too small to split (< 4 patches)")

    # global: one stack holding every pixel of the projected mesh region
    h, w = rendered.frames[0].shape
    region = np.zeros((h, w), dtype=np.uint8)
    for tri in range(mesh.triangle_count):
        verts = mesh.triangle_projection(mesh.reference_view, tri)
        region |= rasterize_mask(verts, (h, w)).mask
    pix = np.flatnonzero(region.ravel())
    intensities = np.vstack([fr.pixels.ravel()[pix] for fr in rendered.frames])
    observed = (intensities >= config.tau_dark) & (intensities <= config.tau_sat)
    span = max(float(w), float(h))
    dummy_tri = np.array([[-1.0, 3.0 * span, -1.0], [-1.0, -1.0, 3.0 * span]])
    grid = TemplateGrid(
        vertices2d=dummy_tri, base_vertices2d=dummy_tri,
        origin=np.zeros(2), pitch=1.0, shape=(h, w), pixel_index_set=pix)
    global_stack = PatchStack(
        intensities=intensities, observed=observed, template_pixels=pix,
        template_shape=(h, w), triangle_id=-1, grid=grid)

    opts = SolverOptions(tol=config.solver_tol, max_iters=config.solver_max_iters)
    t0 = time.perf_counter()
    factors = solve_patch(global_stack, opts=opts)
    hf = integrate_normals(factors, global_stack, backend=config.integrate_backend)
    global_seconds = time.perf_counter() - t0
    global_points = hf.points().T
    global_error = error_3d(global_points, rendered.truth_points)

    t0 = time.perf_counter()
    dense, report = run_pipeline(config, prerendered=rendered)
    piecewise_seconds = time.perf_counter() - t0
    residuals = [r["residual"] for r in report.patch_records]
    return BenchReport(
        patches=mesh.triangle_count,
        global_seconds=global_seconds,
        piecewise_seconds=piecewise_seconds,
        global_error_percent=global_error,
        piecewise_error_percent=report.error_3d_percent,
        global_residual=factors.residual,
        piecewise_mean_residual=float(np.mean(residuals)) if residuals else np.nan,
    )
