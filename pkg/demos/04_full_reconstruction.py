"""
End-to-end reconstruction of a shaded ball
==========================================

Thirty views on a 50 degree arc with wildly varying lights: attached shadows
and saturated frames hide about two thirds of all patch-stack entries, and
the pipeline still recovers the surface to about a percent of its size.

Writes the reconstructed surface (PLY + OBJ), an error heatmap and the run
report into demo_04_run/.
"""

from patchps import (
    PipelineConfig,
    SphereCapSurface,
    SyntheticScene,
    render,
    run_pipeline,
)

scene = SyntheticScene(
    surface=SphereCapSurface(rim=0.88, cap_height=0.6),
    footprint=1.0, frame_count=30, arc_span_deg=50.0,
    camera_distance=12.0, image_size=240, sparse_points=120,
    light_zenith_deg=(55.0, 85.0), light_ambient=(0.0, 0.004),
    light_strength=(0.04, 0.55), saturating_fraction=0.7,
    saturating_strength=(3.2, 4.5), noise_sigma=0.003, seed=11,
)
print("rendering 30 frames ...")
rendered = render(scene)

config = PipelineConfig(workers=1, output_dir="demo_04_run")
dense, report = run_pipeline(config, prerendered=rendered)
print()
print(report.to_text())
print()
print(f"surface points: {dense.point_count}")
print("outputs in demo_04_run/: surface.ply, surface.obj, error_heatmap.png,")
print("report.json, report.txt, solver_trace.json, alignment_report.json")
