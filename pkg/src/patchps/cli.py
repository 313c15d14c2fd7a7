"""Command line interface.

Verbs:
    reconstruct <config.json>        run the full pipeline
    synth <scene.json> <out-dir>     render a synthetic scene to files
    bench <scene.json>               piecewise-vs-global benchmark
    report <run-dir>                 pretty-print a saved run report
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as pio
from .pipeline import PipelineConfig, benchmark_piecewise_vs_global, run_pipeline
from .synthetic import render, scene_from_dict


def _cmd_reconstruct(args) -> int:
    config = PipelineConfig.from_file(args.config)
    if args.output_dir:
        config.output_dir = args.output_dir
    if args.workers:
        config.workers = args.workers
    if args.resume:
        config.resume = True
    dense, report = run_pipeline(config)
    print(report.to_text())
    return 0


def _cmd_synth(args) -> int:
    scene = scene_from_dict(pio.read_json(args.scene))
    rendered = render(scene)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    image_files = []
    for frame in rendered.frames:
        path = out / f"frame_{frame.frame_id:03d}.png"
        pio.save_image(path, frame.pixels)
        image_files.append(str(path))
    pio.write_sparse_points(out / "sparse_points.txt",
                            rendered.sparse_points3d, rendered.projections)
    np.save(out / "truth_points.npy", rendered.truth_points)
    pio.write_json(out / "reconstruct_config.json", {
        "image_files": image_files,
        "sparse_file": str(out / "sparse_points.txt"),
        "output_dir": str(out / "run"),
    })
    print(f"wrote {len(image_files)} frames, sparse points and truth to {out}")
    return 0


def _cmd_bench(args) -> int:
    scene = scene_from_dict(pio.read_json(args.scene))
    config = PipelineConfig(workers=args.workers or 1)
    bench = benchmark_piecewise_vs_global(scene, config)
    print(f"patches             : {bench.patches}")
    print(f"global solve        : {bench.global_seconds:.2f} s "
          f"(error {bench.global_error_percent:.2f}%)")
    print(f"piecewise pipeline  : {bench.piecewise_seconds:.2f} s "
          f"(error {bench.piecewise_error_percent:.2f}%)")
    print(f"speedup             : {bench.speedup:.1f}x")
    if args.out:
        pio.write_json(args.out, bench.to_dict())
    return 0


def _cmd_report(args) -> int:
    path = Path(args.run_dir) / "report.json"
    if not path.exists():
        print(f"no report.json under {args.run_dir}", file=sys.stderr)
        return 1
    data = pio.read_json(path)
    width = max(len(k) for k in data)
    for key in sorted(data):
        value = data[key]
        if isinstance(value, (dict, list)):
            value = f"<{len(value)} entries>"
        print(f"{key:<{width}s} : {value}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="patchps",
        description="piecewise multi-view photometric surface reconstruction",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p_rec = sub.add_parser("reconstruct", help="run the pipeline from a config file")
    p_rec.add_argument("config")
    p_rec.add_argument("--output-dir")
    p_rec.add_argument("--workers", type=int)
    p_rec.add_argument("--resume", action="store_true")
    p_rec.set_defaults(func=_cmd_reconstruct)

    p_syn = sub.add_parser("synth", help="render a synthetic scene to files")
    p_syn.add_argument("scene")
    p_syn.add_argument("out_dir")
    p_syn.set_defaults(func=_cmd_synth)

    p_ben = sub.add_parser("bench", help="piecewise vs global benchmark")
    p_ben.add_argument("scene")
    p_ben.add_argument("--workers", type=int)
    p_ben.add_argument("--out", help="write the benchmark table as JSON")
    p_ben.set_defaults(func=_cmd_bench)

    p_rep = sub.add_parser("report", help="print a saved run report")
    p_rep.add_argument("run_dir")
    p_rep.set_defaults(func=_cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
