"""Frame-to-keyframe tracking loop: keyframe caches, pose accumulation, output.

The engine tracks every frame against the current keyframe and replaces the
keyframe when the motion grows, or when too few reference pixels still
track well. Global poses are camera-to-world; the solver's warp transform
maps keyframe coordinates to current-frame coordinates, so the relative
camera pose is its inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import descriptor, geometry, imgproc, solver
from .descriptor import ChannelStack
from .exceptions import (
    DegenerateSystemError,
    DegradedKeyframeError,
    EmptySelectionError,
    MissingDepthError,
)
from .geometry import Intrinsics
from .solver import KeyframeLevel, OptimizeStats, SolverConfig

MIN_KEYFRAME_PIXELS = 6


@dataclass
class KeyframeConfig:
    motion_threshold_trans: float = 0.3  # meters
    motion_threshold_rot: float = math.radians(5.0)
    good_fraction_min: float = 0.60
    good_percentile: float = 0.80

    def __post_init__(self):
        if self.motion_threshold_trans <= 0 or self.motion_threshold_rot <= 0:
            raise ValueError("motion thresholds must be positive")
        for v in (self.good_fraction_min, self.good_percentile):
            if not (0.0 < v <= 1.0):
                raise ValueError("fractions must be in (0, 1]")


@dataclass
class Keyframe:
    levels: list  # KeyframeLevel, index 0 = finest
    pose: np.ndarray  # global camera-to-world pose of the keyframe
    weight_threshold: float | None = None  # set on the first tracked frame


@dataclass
class FrameResult:
    index: int
    timestamp: float
    global_pose: np.ndarray
    rel_pose: np.ndarray  # camera motion keyframe -> current
    stats: OptimizeStats
    status: str  # ok | tracking_lost | keyframe_deferred
    keyframe_created: bool = False


def compute_channels(img: np.ndarray, cfg: SolverConfig) -> ChannelStack:
    """Descriptor channels for one image under the configured mode."""
    if cfg.mode == "raw-intensity":
        return descriptor.intensity_channels(img, cfg.sigma_pre)
    return descriptor.compute_bitplanes(img, cfg.sigma_pre, cfg.sigma_channel)


def frame_channels(img: np.ndarray, levels: int, cfg: SolverConfig) -> list:
    """Per-level descriptor channels of a frame (index 0 = finest)."""
    return [compute_channels(lv, cfg) for lv in imgproc.build_pyramid(img, levels)]


def subsample_depth(depth: np.ndarray) -> np.ndarray:
    """Halve a depth map, keeping the first valid sample of each 2x2 block.

    Nearest-valid instead of averaging so foreground/background depths do
    not mix across discontinuities.
    """
    d = np.asarray(depth, dtype=np.float64)
    h2, w2 = d.shape[0] // 2, d.shape[1] // 2
    blocks = [
        d[: 2 * h2 : 2, : 2 * w2 : 2],
        d[: 2 * h2 : 2, 1 : 2 * w2 : 2],
        d[1 : 2 * h2 : 2, : 2 * w2 : 2],
        d[1 : 2 * h2 : 2, 1 : 2 * w2 : 2],
    ]
    out = np.full((h2, w2), np.nan)
    for b in blocks:
        take = ~(np.isfinite(out) & (out > 0)) & np.isfinite(b) & (b > 0)
        out[take] = b[take]
    return out


def make_keyframe(
    img: np.ndarray,
    depth: np.ndarray,
    K: Intrinsics,
    global_pose: np.ndarray,
    cfg: SolverConfig,
) -> Keyframe:
    """Build the per-level descriptor, selection, and Jacobian caches.

    Raises DegradedKeyframeError when any level ends up with fewer than 6
    usable pixels (EmptySelectionError is converted accordingly).
    """
    h, w = np.asarray(img).shape
    n_levels = imgproc.compute_num_levels(w, h)
    pyr = imgproc.build_pyramid(img, n_levels)
    levels = []
    d = np.asarray(depth, dtype=np.float64)
    for k, lv in enumerate(pyr):
        bp = compute_channels(lv, cfg)
        sal = descriptor.saliency(bp)
        if k > 0:
            d = subsample_depth(d)
        try:
            sel = solver.select_pixels(sal, d, cfg.nms_min_width, cfg.nms_min_height)
        except EmptySelectionError as e:
            raise DegradedKeyframeError(f"level {k}: {e}") from e
        if len(sel) < MIN_KEYFRAME_PIXELS:
            raise DegradedKeyframeError(
                f"level {k}: only {len(sel)} usable pixels (need {MIN_KEYFRAME_PIXELS})"
            )
        K_level = K.scaled(k)
        levels.append(
            KeyframeLevel(
                selection=sel,
                jacobian=solver.precompute_jacobian(bp, sel, K_level),
                ref_values=solver.reference_values(bp, sel),
                intrinsics=K_level,
            )
        )
    return Keyframe(levels=levels, pose=np.array(global_pose, dtype=np.float64))


def should_create_keyframe(rel: np.ndarray, stats: OptimizeStats, cfg: KeyframeConfig) -> bool:
    """Replace the keyframe on large motion or when good points drop below 60%."""
    rel = np.asarray(rel, dtype=np.float64)
    if np.linalg.norm(rel[:3, 3]) > cfg.motion_threshold_trans:
        return True
    if geometry.rotation_angle(rel) > cfg.motion_threshold_rot:
        return True
    good = stats.good_fraction
    return bool(np.isfinite(good) and good < cfg.good_fraction_min)


def _good_fraction(kf: Keyframe, stats: OptimizeStats, cfg: KeyframeConfig) -> float:
    """Fraction of keyframe pixels still tracking well.

    A pixel is good if it projects inside the image and its mean channel
    weight reaches the keyframe's reference threshold (the
    (1 - good_percentile) quantile of the first tracked frame's weights).
    """
    if stats.final_weights is None or stats.num_selected == 0:
        return 0.0
    n = stats.num_selected
    w = stats.final_weights.reshape(n, -1).mean(axis=1)
    valid = stats.final_valid.reshape(n, -1)[:, 0]
    if kf.weight_threshold is None:
        ref = w[valid]
        kf.weight_threshold = float(np.quantile(ref, 1.0 - cfg.good_percentile)) if len(ref) else 0.0
    good = valid & (w >= kf.weight_threshold) & (w > 0)
    return float(np.count_nonzero(good)) / float(n)


class VisualOdometry:
    """Streaming frame-to-keyframe visual odometry for one sequence."""

    def __init__(
        self,
        K: Intrinsics,
        solver_config: SolverConfig | None = None,
        keyframe_config: KeyframeConfig | None = None,
    ):
        self.intrinsics = K
        self.solver_config = solver_config or SolverConfig()
        self.keyframe_config = keyframe_config or KeyframeConfig()
        self.trajectory: list = []  # (timestamp, global pose)
        self.warnings: list = []
        self._keyframe: Keyframe | None = None
        self._t0_warp = np.eye(4)  # warp seed: previous frame's keyframe->current transform
        self._last_pose = np.eye(4)
        self._index = 0

    @property
    def keyframe(self) -> Keyframe | None:
        return self._keyframe

    def process_frame(
        self, img: np.ndarray, depth: np.ndarray | None = None, timestamp: float | None = None
    ) -> FrameResult:
        """Track one frame; returns global pose, pose relative to the keyframe,
        and optimizer statistics.

        The first frame must carry depth (it becomes the keyframe). Later
        frames need depth only when a keyframe replacement is due; without
        it the replacement is deferred with a warning. A washed-out frame
        that cannot seed a new keyframe yields status `tracking_lost` with
        the pose held.
        """
        index = self._index
        self._index += 1
        t = float(timestamp) if timestamp is not None else float(index)
        stats = OptimizeStats()

        if self._keyframe is None:
            if depth is None:
                raise MissingDepthError("first frame requires a depth map")
            self._keyframe = make_keyframe(
                img, depth, self.intrinsics, np.eye(4), self.solver_config
            )
            stats.good_fraction = 1.0
            stats.num_selected = len(self._keyframe.levels[0].selection)
            self.trajectory.append((t, np.eye(4)))
            self._last_pose = np.eye(4)
            return FrameResult(index, t, np.eye(4), np.eye(4), stats, "ok", True)

        kf = self._keyframe
        n_levels = len(kf.levels)
        bps = frame_channels(img, n_levels, self.solver_config)
        if np.ptp(bps[0].channels) == 0.0:
            # washed-out frame: the descriptor carries no structure at all,
            # so selection would be empty and alignment is undefined
            self.warnings.append(f"frame {index}: washed-out frame, tracking lost")
            pose = self._last_pose
            rel = geometry.invert_rigid(kf.pose) @ pose
            self.trajectory.append((t, pose))
            return FrameResult(index, t, pose, rel, stats, "tracking_lost", False)
        status = "ok"
        keyframe_created = False
        try:
            T_warp, stats = solver.optimize_pyramid(kf.levels, bps, self._t0_warp, self.solver_config)
            rel = geometry.invert_rigid(T_warp)
            stats.good_fraction = _good_fraction(kf, stats, self.keyframe_config)
            pose = kf.pose @ rel
            if should_create_keyframe(rel, stats, self.keyframe_config):
                if depth is None:
                    status = "keyframe_deferred"
                    self.warnings.append(f"frame {index}: keyframe due but no depth; deferred")
                    self._t0_warp = T_warp
                else:
                    try:
                        self._keyframe = make_keyframe(
                            img, depth, self.intrinsics, pose, self.solver_config
                        )
                        self._t0_warp = np.eye(4)
                        keyframe_created = True
                    except (DegradedKeyframeError, EmptySelectionError) as e:
                        status = "tracking_lost"
                        self.warnings.append(f"frame {index}: keyframe creation failed ({e})")
                        pose = self._last_pose
                        rel = geometry.invert_rigid(kf.pose) @ pose
            else:
                self._t0_warp = T_warp
        except DegenerateSystemError as e:
            status = "tracking_lost"
            self.warnings.append(f"frame {index}: optimizer degenerate ({e})")
            pose = self._last_pose
            rel = geometry.invert_rigid(kf.pose) @ pose

        self._last_pose = pose
        self.trajectory.append((t, pose))
        return FrameResult(index, t, pose, rel, stats, status, keyframe_created)


def export_ply(path, points: np.ndarray, intensities: np.ndarray) -> None:
    """Write 3D points with grayscale colors as an ASCII PLY file."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    grey = np.clip(np.asarray(intensities).reshape(-1), 0, 255).astype(np.uint8)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for (x, y, z), g in zip(points, grey):
            f.write(f"{x:.6f} {y:.6f} {z:.6f} {g} {g} {g}\n")


def keyframe_points(
    img: np.ndarray, depth: np.ndarray, K: Intrinsics, pose: np.ndarray, stride: int = 2
) -> tuple[np.ndarray, np.ndarray]:
    """Valid-depth pixels of a keyframe as world points plus intensities."""
    d = np.asarray(depth, dtype=np.float64)[::stride, ::stride]
    g = np.asarray(img)[::stride, ::stride]
    h, w = d.shape
    xs, ys = np.meshgrid(np.arange(w) * stride, np.arange(h) * stride)
    ok = np.isfinite(d) & (d > 0)
    p = np.stack([xs[ok], ys[ok]], axis=-1).astype(np.float64)
    X = geometry.backproject(K, p, d[ok])
    return geometry.transform_points(pose, X), g[ok]
