"""Trajectory error metrics (KITTI-style RPE, aligned ATE) and ablations."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry

DEFAULT_LENGTHS = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0]
SPEED_BUCKETS_KMH = [14.4 + 7.2 * k for k in range(11)]  # 4..24 m/s step 2


@dataclass
class RpeReport:
    """Bucketed relative pose errors.

    Maps bucket key -> (translation error percent, rotation error deg/m,
    subsequence count). Buckets with no subsequences are omitted.
    """

    by_length: dict = field(default_factory=dict)
    by_speed: dict = field(default_factory=dict)


@dataclass
class AteReport:
    rmse: float
    errors: np.ndarray  # per-frame translational residuals after alignment


def _positions(traj) -> np.ndarray:
    return np.array([np.asarray(p)[:3, 3] for _, p in traj])


def _cumulative_path(traj) -> np.ndarray:
    pos = _positions(traj)
    steps = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def _first_frame_past(dist: np.ndarray, start: int, length: float) -> int:
    j = int(np.searchsorted(dist, dist[start] + length, side="right"))
    return j if j < len(dist) else -1


def evaluate_rpe(est, gt, lengths=None) -> RpeReport:
    """Relative pose error over fixed path lengths, every frame as a start.

    For a subsequence of ground-truth length L starting at frame i and
    ending at frame j, the error transform is inv(gt_rel) . est_rel;
    translation error is ||t|| / L * 100 (percent) and rotation error is
    angle / L (degrees per meter). Results are averaged per length bucket
    and per speed bucket (nearest 7.2 km/h bin, using the timestamps).
    """
    if len(est) != len(gt):
        raise ValueError(f"trajectories must be index-matched: {len(est)} vs {len(gt)}")
    if lengths is None:
        lengths = DEFAULT_LENGTHS
    dist = _cumulative_path(gt)
    times = np.array([t for t, _ in gt])
    sums = {L: [0.0, 0.0, 0] for L in lengths}
    speed_sums = {s: [0.0, 0.0, 0] for s in SPEED_BUCKETS_KMH}
    est_poses = [np.asarray(p, dtype=np.float64) for _, p in est]
    gt_poses = [np.asarray(p, dtype=np.float64) for _, p in gt]
    for i in range(len(gt_poses)):
        for L in lengths:
            j = _first_frame_past(dist, i, L)
            if j < 0:
                continue
            gt_rel = geometry.invert_rigid(gt_poses[i]) @ gt_poses[j]
            est_rel = geometry.invert_rigid(est_poses[i]) @ est_poses[j]
            err = geometry.invert_rigid(gt_rel) @ est_rel
            t_err = float(np.linalg.norm(err[:3, 3])) / L * 100.0
            r_err = float(np.degrees(geometry.rotation_angle(err))) / L
            acc = sums[L]
            acc[0] += t_err
            acc[1] += r_err
            acc[2] += 1
            dt = times[j] - times[i]
            if dt > 0:
                speed_kmh = (dist[j] - dist[i]) / dt * 3.6
                for s in SPEED_BUCKETS_KMH:
                    if abs(speed_kmh - s) <= 3.6:
                        sacc = speed_sums[s]
                        sacc[0] += t_err
                        sacc[1] += r_err
                        sacc[2] += 1
                        break
    report = RpeReport()
    for L, (ts, rs, n) in sums.items():
        if n:
            report.by_length[L] = (ts / n, rs / n, n)
    for s, (ts, rs, n) in speed_sums.items():
        if n:
            report.by_speed[s] = (ts / n, rs / n, n)
    return report


def umeyama_alignment(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form rigid alignment (rotation, translation) of src onto dst."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    U, _, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    t = mu_d - R @ mu_s
    return R, t


def evaluate_ate(est, gt) -> AteReport:
    """RMSE of translations after optimal rigid alignment of est onto gt."""
    if len(est) != len(gt):
        raise ValueError(f"trajectories must be index-matched: {len(est)} vs {len(gt)}")
    if len(est) < 3:
        raise ValueError(f"need at least 3 poses, got {len(est)}")
    p_est = _positions(est)
    p_gt = _positions(gt)
    R, t = umeyama_alignment(p_est, p_gt)
    resid = p_gt - (p_est @ R.T + t)
    errors = np.linalg.norm(resid, axis=1)
    return AteReport(rmse=float(np.sqrt(np.mean(errors**2))), errors=errors)


def ablate_smoothing(scene_cfg, sigma0_grid, sigma1_grid, **solver_kwargs) -> list:
    """Pose error of a single small-shift alignment over a smoothing grid.

    Returns rows (sigma_pre, sigma_channel, twist error norm); intended to
    be dumped as CSV. The scene is rendered once; each grid cell rebuilds
    the keyframe with its own smoothing settings. `solver_kwargs` override
    the remaining solver settings; a sigma_floor around the descriptor
    quantization scale (~0.25) keeps the unsmoothed cells from stalling at
    an all-integer-warp start, where the residual median is exactly zero.
    """
    from . import datasets, pipeline, solver

    seq = datasets.generate_synthetic(scene_cfg, 2)
    T_gt_warp = geometry.invert_rigid(seq.poses[1])
    rows = []
    for s0 in sigma0_grid:
        for s1 in sigma1_grid:
            cfg = solver.SolverConfig(
                sigma_pre=float(s0), sigma_channel=float(s1), **solver_kwargs
            )
            kf = pipeline.make_keyframe(seq.images[0], seq.depths[0], seq.intrinsics, np.eye(4), cfg)
            bps = pipeline.frame_channels(seq.images[1], len(kf.levels), cfg)
            T_est, _ = solver.optimize_pyramid(kf.levels, bps, np.eye(4), cfg)
            err = float(np.linalg.norm(geometry.se3_log(geometry.invert_rigid(T_gt_warp) @ T_est)))
            rows.append((float(s0), float(s1), err))
    return rows


def write_rpe_csv(path, report: RpeReport) -> None:
    with open(path, "w") as f:
        f.write("bucket_type,bucket,translation_percent,rotation_deg_per_m,count\n")
        for L in sorted(report.by_length):
            t, r, n = report.by_length[L]
            f.write(f"length,{L:g},{t:.6f},{r:.8f},{n}\n")
        for s in sorted(report.by_speed):
            t, r, n = report.by_speed[s]
            f.write(f"speed_kmh,{s:g},{t:.6f},{r:.8f},{n}\n")
