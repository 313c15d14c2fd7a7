"""Piecewise multi-view photometric surface reconstruction.

The pipeline decomposes multi-view, multi-illumination images into
per-triangle patches on a coarse Delaunay mesh, registers each patch onto a
fronto-parallel template, solves a masked bilinear photometric factorization
per patch, integrates the recovered normals into height fields, aligns the
patches through their overlap bands, and fuses everything with a variational
refinement. A synthetic rendering oracle makes every stage verifiable against
ground truth.
"""

from .geometry import (
    Barycentric,
    CoarseMesh,
    DegenerateTriangleError,
    FacetFrame,
    GeometryError,
    barycentric_of,
    build_mesh,
    enlarge_triangle,
    facet_frame,
)
from .decompose import ImageFrame, PatchMask, extract_patch, rasterize_mask, to_grayscale
from .register import (
    PatchStack,
    TemplateGrid,
    assemble_stack,
    make_template_grid,
    missing_fraction,
    register_patch,
)
from .solver import (
    PhotometricFactors,
    SolverOptions,
    UnderConstrainedError,
    project_manifold,
    shade,
    solve_patch,
)
from .integration import (
    HeightField,
    integrate_gradients_dct,
    integrate_gradients_masked,
    integrate_normals,
)
from .align import (
    AlignmentReport,
    FacetPointSet,
    PatchCorrection,
    anchor_to_corners,
    apply_correction,
    lift_to_facet,
    overlap_correspondences,
    patch_curvature,
    solve_corrections,
)
from .refine import DenseSurface, RawSurface, refine, superpose, weight_of
from .synthetic import (
    Camera,
    GaussianBumpsSurface,
    PlaneSurface,
    RenderResult,
    SphereCapSurface,
    SyntheticScene,
    error_3d,
    render,
    scene_from_dict,
    scene_to_dict,
)
from .pipeline import (
    BenchReport,
    PipelineConfig,
    RunReport,
    benchmark_piecewise_vs_global,
    build_patch_stacks,
    run_pipeline,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentReport", "Barycentric", "BenchReport", "Camera", "CoarseMesh",
    "DegenerateTriangleError", "DenseSurface", "FacetFrame", "FacetPointSet",
    "GaussianBumpsSurface", "GeometryError", "HeightField", "ImageFrame",
    "PatchCorrection", "PatchMask", "PatchStack", "PhotometricFactors",
    "PipelineConfig", "PlaneSurface", "RawSurface", "RenderResult", "RunReport",
    "SolverOptions", "SphereCapSurface", "SyntheticScene", "TemplateGrid",
    "UnderConstrainedError", "anchor_to_corners", "apply_correction",
    "assemble_stack", "barycentric_of", "benchmark_piecewise_vs_global",
    "build_mesh", "build_patch_stacks", "enlarge_triangle", "error_3d",
    "extract_patch", "facet_frame", "integrate_gradients_dct",
    "integrate_gradients_masked", "integrate_normals", "lift_to_facet",
    "make_template_grid", "missing_fraction", "overlap_correspondences",
    "patch_curvature", "project_manifold", "rasterize_mask", "refine",
    "register_patch", "render", "run_pipeline", "scene_from_dict",
    "scene_to_dict", "shade", "solve_corrections", "solve_patch", "superpose",
    "to_grayscale", "weight_of",
]
