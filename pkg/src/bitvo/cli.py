"""Command-line entry point: run sequences, generate data, evaluate, benchmark.

Exit codes: 0 success, 1 fatal input error, 2 tracking degraded (the
trajectory is still written).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import datasets, descriptor, evaluation, geometry, imgproc, pipeline, solver, trajectory
from .exceptions import BitvoError

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_DEGRADED = 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bitvo", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run visual odometry on a sequence")
    run.add_argument("--root", required=True, help="dataset directory")
    run.add_argument("--layout", choices=["tum", "kitti"], default="tum")
    run.add_argument("--calib", help="calibration file (default: <root>/calib.txt)")
    run.add_argument("--mode", choices=["bitplanes", "raw-intensity"])
    run.add_argument("--config", help="key=value solver config file")
    run.add_argument("--output", required=True, help="trajectory output path")
    run.add_argument("--format", choices=["tum", "kitti"], default="tum")
    run.add_argument("--ply", help="optional PLY dump of keyframe points")
    run.add_argument("-v", "--verbose", action="store_true")

    synth = sub.add_parser("synth", help="generate a synthetic sequence")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--frames", type=int, default=10)
    synth.add_argument("--width", type=int, default=320)
    synth.add_argument("--height", type=int, default=240)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--depth-model", choices=["plane", "random"], default="plane")
    synth.add_argument("--z0", type=float, default=4.0)
    synth.add_argument("--tilt", default="0,0", help="scene plane tilt in degrees, e.g. 30,15")
    synth.add_argument("--noise", type=float, default=0.0, help="sensor noise sigma")
    synth.add_argument(
        "--twist",
        default="0,0,0,0.02,0,0",
        help="per-frame twist wx,wy,wz,vx,vy,vz",
    )
    synth.add_argument(
        "--corruption",
        choices=["none", "gamma", "gain-bias", "alternating"],
        default="none",
    )
    synth.add_argument("--gamma", type=float, default=0.6)
    synth.add_argument("--gain", type=float, default=1.3)
    synth.add_argument("--bias", type=float, default=10.0)

    ev = sub.add_parser("eval", help="compare two trajectory files")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--est-format", choices=["tum", "kitti"], default="tum")
    ev.add_argument("--gt-format", choices=["tum", "kitti"], default="tum")
    ev.add_argument("--lengths", help="comma-separated path lengths in meters")
    ev.add_argument("--ate", action="store_true", help="also report aligned ATE")
    ev.add_argument("--csv", help="write RPE buckets as CSV")

    bench = sub.add_parser("bench", help="time the major pipeline stages")
    bench.add_argument("--image", required=True, help="8-bit grayscale input image")
    bench.add_argument("--iterations", type=int, default=20)
    bench.add_argument("--csv", help="write timings as CSV")
    return p


def _load_solver_config(args) -> solver.SolverConfig:
    cfg = solver.SolverConfig.from_file(args.config) if args.config else solver.SolverConfig()
    if getattr(args, "mode", None):
        cfg = cfg.with_overrides(mode=args.mode)
    return cfg


def cmd_run(args) -> int:
    cfg = _load_solver_config(args)
    seq = datasets.load_sequence(args.root, args.layout)
    if args.calib:
        seq.intrinsics = geometry.load_intrinsics(args.calib)
    for msg in seq.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    vo = pipeline.VisualOdometry(seq.intrinsics, cfg)
    ply_points, ply_grey = [], []
    degraded = 0
    for frame in seq.frames:
        t0 = time.perf_counter()
        img = seq.read_intensity(frame)
        depth = seq.read_depth(frame)
        t1 = time.perf_counter()
        result = vo.process_frame(img, depth, frame.timestamp)
        t2 = time.perf_counter()
        if result.status != "ok":
            degraded += 1
        if args.ply and result.keyframe_created and depth is not None:
            pts, grey = pipeline.keyframe_points(
                img, depth, seq.intrinsics, result.global_pose, stride=4
            )
            ply_points.append(pts)
            ply_grey.append(grey)
        if args.verbose:
            iters = sum(result.stats.iterations_per_level)
            print(
                f"frame {result.index:5d} status={result.status:16s} "
                f"iters={iters:3d} good={result.stats.good_fraction:5.2f} "
                f"load={1e3 * (t1 - t0):6.1f}ms track={1e3 * (t2 - t1):6.1f}ms"
            )
    trajectory.save(args.output, vo.trajectory, args.format)
    print(f"wrote {len(vo.trajectory)} poses to {args.output}")
    if args.ply and ply_points:
        pipeline.export_ply(args.ply, np.vstack(ply_points), np.concatenate(ply_grey))
        print(f"wrote keyframe point cloud to {args.ply}")
    for msg in vo.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_DEGRADED if degraded else EXIT_OK


def cmd_synth(args) -> int:
    twist = [float(v) for v in args.twist.split(",")]
    if len(twist) != 6:
        raise ValueError(f"twist needs 6 components, got {len(twist)}")
    tilt = [float(v) for v in args.tilt.split(",")]
    if len(tilt) != 2:
        raise ValueError(f"tilt needs 2 components, got {len(tilt)}")
    cfg = datasets.SynthConfig(
        width=args.width,
        height=args.height,
        seed=args.seed,
        depth_model=args.depth_model,
        z0=args.z0,
        plane_tilt=tuple(tilt),
        noise_sigma=args.noise,
        twist=tuple(twist),
        corruption=args.corruption,
        gamma=args.gamma,
        gain=args.gain,
        bias=args.bias,
    )
    seq = datasets.generate_synthetic(cfg, args.frames)
    datasets.write_synthetic(seq, args.out)
    print(f"wrote {len(seq)} frames + groundtruth.txt to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    est = trajectory.load(args.est, args.est_format)
    gt = trajectory.load(args.gt, args.gt_format)
    lengths = None
    if args.lengths:
        lengths = [float(v) for v in args.lengths.split(",")]
    report = evaluation.evaluate_rpe(est, gt, lengths)
    if report.by_length:
        print("path-length buckets (translation %, rotation deg/m, count):")
        for L in sorted(report.by_length):
            t, r, n = report.by_length[L]
            print(f"  {L:7.1f} m  {t:8.4f} %  {r:.6f} deg/m  n={n}")
    else:
        print("no subsequence reached the requested path lengths")
    if report.by_speed:
        print("speed buckets (translation %, rotation deg/m, count):")
        for s in sorted(report.by_speed):
            t, r, n = report.by_speed[s]
            print(f"  {s:6.1f} km/h {t:8.4f} %  {r:.6f} deg/m  n={n}")
    if args.ate:
        ate = evaluation.evaluate_ate(est, gt)
        print(f"ATE RMSE: {ate.rmse:.6f} m over {len(ate.errors)} poses")
    if args.csv:
        evaluation.write_rpe_csv(args.csv, report)
        print(f"wrote {args.csv}")
    return EXIT_OK


def _median_ms(fn, iterations: int) -> float:
    samples = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        fn()
        samples.append(1e3 * (time.perf_counter() - t0))
    return float(np.median(samples))


def bench_image(img: np.ndarray, iterations: int = 20) -> dict:
    """Median wall-times (ms) of the four major stages on one image."""
    h, w = img.shape
    levels = imgproc.compute_num_levels(w, h)
    K = geometry.Intrinsics(fx=0.8 * w, fy=0.8 * w, cx=w / 2.0, cy=h / 2.0)
    cfg_bp = solver.SolverConfig()
    cfg_raw = solver.SolverConfig(mode="raw-intensity")
    depth = np.full((h, w), 4.0)

    pyr = imgproc.build_pyramid(img, levels)
    bp = pipeline.compute_channels(pyr[0], cfg_bp)
    sal = descriptor.saliency(bp)
    sel = solver.select_pixels(sal, depth, cfg_bp.nms_min_width, cfg_bp.nms_min_height)
    ref = solver.reference_values(bp, sel)
    T = geometry.se3_exp([0.001, 0, 0, 0.01, 0, 0])

    timings = {
        "Pyramid construction": _median_ms(lambda: imgproc.build_pyramid(img, levels), iterations),
        "Descriptor computation (raw intensity)": _median_ms(
            lambda: pipeline.compute_channels(pyr[0], cfg_raw), iterations
        ),
        "Descriptor computation (bitplanes)": _median_ms(
            lambda: pipeline.compute_channels(pyr[0], cfg_bp), iterations
        ),
        "Jacobian pre-computation": _median_ms(
            lambda: solver.precompute_jacobian(bp, sel, K), iterations
        ),
        "Descriptor warping": _median_ms(
            lambda: solver.compute_residuals(bp, ref, sel, T, K), iterations
        ),
    }
    return timings


def cmd_bench(args) -> int:
    img = imgproc.load_gray(args.image)
    timings = bench_image(img, args.iterations)
    print(f"median of {args.iterations} runs on {img.shape[1]}x{img.shape[0]}:")
    for name, ms in timings.items():
        print(f"  {name:40s} {ms:8.2f} ms")
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("stage,median_ms\n")
            for name, ms in timings.items():
                f.write(f"{name},{ms:.4f}\n")
        print(f"wrote {args.csv}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "synth": cmd_synth, "eval": cmd_eval, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except (BitvoError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
