"""Sequence ingestion (TUM / KITTI style layouts) and synthetic test sequences.

The synthetic generator renders views of a textured scene under a known
per-frame camera twist and returns the exact poses, so tracking accuracy
can be scored against ground truth without external data.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import geometry, imgproc
from .geometry import Intrinsics

TUM_DEPTH_SCALE = 5000.0  # 16-bit PNG units per meter (de-facto TUM convention)
KITTI_DISPARITY_SCALE = 256.0  # 16-bit PNG units per disparity pixel
ASSOCIATION_WINDOW = 0.02  # seconds
MIN_DISPARITY = 0.5  # pixels


@dataclass
class SequenceFrame:
    index: int
    timestamp: float
    image_path: str
    depth_path: str | None = None
    disparity_path: str | None = None


@dataclass
class LoadedSequence:
    frames: list
    intrinsics: Intrinsics
    layout: str
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.frames)

    def read_intensity(self, frame: SequenceFrame) -> np.ndarray:
        return imgproc.load_gray(frame.image_path)

    def read_depth(self, frame: SequenceFrame) -> np.ndarray | None:
        """Depth map in meters (NaN = invalid), from either source."""
        if self.layout == "tum":
            if frame.depth_path is None:
                return None
            raw = imgproc.load_u16(frame.depth_path).astype(np.float64)
            depth = raw / TUM_DEPTH_SCALE
            depth[raw == 0] = np.nan
            return depth
        if frame.disparity_path is None:
            return None
        raw = imgproc.load_u16(frame.disparity_path).astype(np.float64)
        return disparity_to_depth(raw / KITTI_DISPARITY_SCALE, self.intrinsics)


def _read_tum_index(path):
    entries = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            ts, rel = line.split()[:2]
            entries.append((float(ts), rel))
    return entries


def load_sequence(root, layout: str) -> LoadedSequence:
    """Load an image sequence from `root` in `tum` or `kitti` layout.

    TUM: `rgb.txt` / `depth.txt` index files, association by nearest
    timestamp within 0.02 s (misses dropped with a warning). KITTI:
    `image_0/` plus a `disparity/` directory of 16-bit PNGs. Both layouts
    read the calibration from `calib.txt` (fx fy cx cy [baseline]);
    a missing calibration or an empty sequence is fatal.
    """
    root = os.fspath(root)
    if layout not in ("tum", "kitti"):
        raise ValueError(f"layout must be 'tum' or 'kitti', got {layout!r}")
    calib = os.path.join(root, "calib.txt")
    if not os.path.isfile(calib):
        raise FileNotFoundError(f"missing calibration file {calib}")
    K = geometry.load_intrinsics(calib)
    warnings = []
    frames = []
    if layout == "tum":
        rgb = _read_tum_index(os.path.join(root, "rgb.txt"))
        depth_index = os.path.join(root, "depth.txt")
        depth = _read_tum_index(depth_index) if os.path.isfile(depth_index) else []
        depth_ts = np.array([t for t, _ in depth]) if depth else None
        for i, (ts, rel) in enumerate(rgb):
            depth_path = None
            if depth_ts is not None:
                j = int(np.argmin(np.abs(depth_ts - ts)))
                if abs(depth_ts[j] - ts) <= ASSOCIATION_WINDOW:
                    depth_path = os.path.join(root, depth[j][1])
                else:
                    warnings.append(
                        f"frame {i} (t={ts:.6f}): nearest depth off by "
                        f"{abs(depth_ts[j] - ts):.3f} s, frame dropped"
                    )
                    continue
            frames.append(SequenceFrame(len(frames), ts, os.path.join(root, rel), depth_path))
    else:
        img_dir = os.path.join(root, "image_0")
        disp_dir = os.path.join(root, "disparity")
        names = sorted(
            n for n in os.listdir(img_dir) if n.lower().endswith((".png", ".pgm"))
        )
        times_file = os.path.join(root, "times.txt")
        times = None
        if os.path.isfile(times_file):
            times = [float(v) for v in open(times_file).read().split()]
        for i, name in enumerate(names):
            stem = os.path.splitext(name)[0]
            disp = os.path.join(disp_dir, stem + ".png")
            if not os.path.isfile(disp):
                disp = None
                warnings.append(f"frame {i}: no disparity file for {name}")
            ts = times[i] if times is not None and i < len(times) else 0.1 * i
            frames.append(SequenceFrame(i, ts, os.path.join(img_dir, name), None, disp))
    if not frames:
        raise ValueError(f"no frames found under {root} ({layout} layout)")
    return LoadedSequence(frames, K, layout, warnings)


def disparity_to_depth(disp: np.ndarray, K: Intrinsics) -> np.ndarray:
    """depth = fx * baseline / disparity; entries below 0.5 px become NaN."""
    if K.baseline is None:
        raise ValueError("intrinsics carry no stereo baseline")
    d = np.asarray(disp, dtype=np.float64)
    ok = np.isfinite(d) & (d > MIN_DISPARITY)
    depth = np.full(d.shape, np.nan)
    depth[ok] = K.fx * K.baseline / d[ok]
    return depth


def depth_to_disparity(depth: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Inverse of disparity_to_depth on valid entries."""
    if K.baseline is None:
        raise ValueError("intrinsics carry no stereo baseline")
    d = np.asarray(depth, dtype=np.float64)
    ok = np.isfinite(d) & (d > 0)
    disp = np.full(d.shape, np.nan)
    disp[ok] = K.fx * K.baseline / d[ok]
    return disp


# ---------------------------------------------------------------------------
# synthetic sequences


@dataclass
class SynthConfig:
    width: int = 320
    height: int = 240
    intrinsics: Intrinsics | None = None  # default: fx = fy = height, centered
    seed: int = 0
    texture_sigma: float = 2.0
    intensity_range: tuple = (25.0, 230.0)  # texture values after rescaling
    depth_model: str = "plane"  # or "random"
    z0: float = 4.0  # plane distance (meters)
    plane_tilt: tuple = (0.0, 0.0)  # plane tilt (about x, about y) in degrees;
    # a tilted plane adds parallax, disambiguating rotation from translation
    zmin: float = 2.0
    zmax: float = 6.0
    depth_sigma: float = 8.0  # smoothing of the random depth field (pixels)
    twist: tuple = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)  # per-frame [omega, nu]
    noise_sigma: float = 0.0  # additive Gaussian sensor noise (intensity levels)
    corruption: str = "none"  # none | gamma | gain-bias | alternating
    gamma: float = 1.0
    gain: float = 1.0
    bias: float = 0.0
    gamma_a: float = 0.6  # alternating: odd frames
    gamma_b: float = 1.4  # alternating: even frames
    dt: float = 0.1  # seconds between frames

    def __post_init__(self):
        if self.z0 <= 0 or self.zmin <= 0 or self.zmax <= 0:
            raise ValueError("depths must be positive")
        if self.gamma <= 0 or self.gamma_a <= 0 or self.gamma_b <= 0:
            raise ValueError("gamma must be positive")
        if self.depth_model not in ("plane", "random"):
            raise ValueError(f"depth_model must be 'plane' or 'random', got {self.depth_model!r}")
        if self.corruption not in ("none", "gamma", "gain-bias", "alternating"):
            raise ValueError(f"unknown corruption {self.corruption!r}")

    def resolved_intrinsics(self) -> Intrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        return Intrinsics(
            fx=float(self.height),
            fy=float(self.height),
            cx=(self.width - 1) / 2.0,
            cy=(self.height - 1) / 2.0,
        )


@dataclass
class SyntheticSequence:
    images: list  # uint8 frames
    depths: list  # float64 depth maps (meters) per frame
    poses: list  # 4x4 camera-to-world poses (ground truth)
    times: list
    intrinsics: Intrinsics
    config: SynthConfig

    def __len__(self):
        return len(self.images)

    def trajectory(self) -> list:
        return list(zip(self.times, self.poses))


def apply_gamma(img: np.ndarray, gamma: float) -> np.ndarray:
    """255 * (v/255)**gamma, rounded back to uint8."""
    v = np.asarray(img, dtype=np.float64)
    out = 255.0 * (v / 255.0) ** gamma
    return np.clip(np.round(out), 0, 255).astype(np.uint8)


def apply_gain_bias(img: np.ndarray, gain: float, bias: float) -> np.ndarray:
    """gain * v + bias, clamped to [0, 255] and rounded to uint8."""
    v = np.asarray(img, dtype=np.float64)
    return np.clip(np.round(gain * v + bias), 0, 255).astype(np.uint8)


def _corrupt(img: np.ndarray, k: int, cfg: SynthConfig) -> np.ndarray:
    if k == 0 or cfg.corruption == "none":
        return img
    if cfg.corruption == "gamma":
        return apply_gamma(img, cfg.gamma)
    if cfg.corruption == "gain-bias":
        return apply_gain_bias(img, cfg.gain, cfg.bias)
    return apply_gamma(img, cfg.gamma_a if k % 2 == 1 else cfg.gamma_b)


def _smooth_noise(rng, shape, sigma, intensity_range=(25.0, 230.0)) -> np.ndarray:
    """Band-limited random texture rescaled to `intensity_range` (dense gradients)."""
    noise = rng.uniform(0.0, 255.0, size=shape)
    if sigma > 0:
        ksize = 2 * int(np.ceil(2 * sigma)) + 1
        noise = imgproc.gaussian_smooth(noise, sigma, ksize)
    lo, hi = noise.min(), noise.max()
    out_lo, out_hi = intensity_range
    return out_lo + (noise - lo) * ((out_hi - out_lo) / max(hi - lo, 1e-12))

MAX_TEXTURE_DIM = 8192


class _ScenePlane:
    """World plane through (0, 0, z0), optionally tilted, with a 2D texture frame."""

    def __init__(self, z0: float, tilt_deg=(0.0, 0.0)):
        ax, ay = np.radians(tilt_deg[0]), np.radians(tilt_deg[1])
        rx = np.array(
            [[1, 0, 0], [0, np.cos(ax), -np.sin(ax)], [0, np.sin(ax), np.cos(ax)]]
        )
        ry = np.array(
            [[np.cos(ay), 0, np.sin(ay)], [0, 1, 0], [-np.sin(ay), 0, np.cos(ay)]]
        )
        basis = rx @ ry
        self.origin = np.array([0.0, 0.0, z0])
        self.e1 = basis[:, 0]
        self.e2 = basis[:, 1]
        self.normal = basis[:, 2]

    def intersect(self, P: np.ndarray, dirs: np.ndarray):
        """Ray scales and plane coordinates for camera rays `dirs` (3, H, W).

        Returns (lam, u, v): camera-frame depth of each pixel and the 2D
        plane coordinates (meters) of the hit point.
        """
        R, t = P[:3, :3], P[:3, 3]
        rd = np.einsum("ij,jhw->ihw", R, dirs)
        denom = np.einsum("i,ihw->hw", self.normal, rd)
        lam = (self.normal @ (self.origin - t)) / denom
        hit = lam * rd + t[:, None, None] - self.origin[:, None, None]
        u = np.einsum("i,ihw->hw", self.e1, hit)
        v = np.einsum("i,ihw->hw", self.e2, hit)
        return lam, u, v


def generate_synthetic(cfg: SynthConfig, n_frames: int) -> SyntheticSequence:
    """Render `n_frames` views of a textured scene moving by exp(twist) per frame.

    Ground-truth camera-to-world poses are exp(k * twist). The `plane`
    depth model renders exactly from a world-plane texture (computing exact
    per-frame depth maps); the `random` model resamples frame 0 with a
    fixed per-pixel depth grid, which is only consistent across frames for
    small motions. Raises ValueError if the motion leaves too little of the
    scene in view.
    """
    if n_frames < 1:
        raise ValueError("need at least one frame")
    K = cfg.resolved_intrinsics()
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.height, cfg.width
    step = geometry.se3_exp(np.asarray(cfg.twist, dtype=np.float64))
    poses = [np.eye(4)]
    for _ in range(1, n_frames):
        poses.append(poses[-1] @ step)

    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    if cfg.depth_model == "plane":
        plane = _ScenePlane(cfg.z0, cfg.plane_tilt)
        dirs = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)])
        # plane footprint over the whole trajectory fixes the texture size
        bounds = []
        for P in poses:
            lam, u, v = plane.intersect(P, dirs)
            if np.any(lam <= 0):
                raise ValueError("motion tilts the view off the scene plane")
            bounds.append((u.min(), u.max(), v.min(), v.max()))
        bounds = np.array(bounds)
        u_lo, u_hi = bounds[:, 0].min(), bounds[:, 1].max()
        v_lo, v_hi = bounds[:, 2].min(), bounds[:, 3].max()
        scale = cfg.z0 / K.fx  # meters per texel, ~1 camera pixel at the plane
        margin = 4
        tw = int(np.ceil((u_hi - u_lo) / scale)) + 2 * margin
        th = int(np.ceil((v_hi - v_lo) / scale)) + 2 * margin
        if max(tw, th) > MAX_TEXTURE_DIM:
            raise ValueError(
                f"per-frame twist too large: scene texture would need {tw}x{th} texels"
            )
        texture = _smooth_noise(rng, (th, tw), cfg.texture_sigma, cfg.intensity_range)
        ou = u_lo - margin * scale
        ov = v_lo - margin * scale
        images, depths = [], []
        for k, P in enumerate(poses):
            lam, u, v = plane.intersect(P, dirs)
            vals, ok = imgproc.bilinear_sample(texture, (u - ou) / scale, (v - ov) / scale)
            if not np.all(ok):
                raise ValueError("internal texture sizing failure")
            if cfg.noise_sigma > 0:
                vals = vals + rng.normal(0.0, cfg.noise_sigma, size=vals.shape)
            img = np.clip(np.round(vals), 0, 255).astype(np.uint8)
            images.append(_corrupt(img, k, cfg))
            depths.append(lam.copy())
    else:
        base = _smooth_noise(rng, (h, w), cfg.texture_sigma, cfg.intensity_range)
        # band-limited depth: per-pixel random but renderable, since warping
        # the fixed grid stays nearly consistent across small motions
        depth01 = rng.uniform(0.0, 1.0, size=(h, w))
        if cfg.depth_sigma > 0:
            ksize = 2 * int(np.ceil(2 * cfg.depth_sigma)) + 1
            depth01 = imgproc.gaussian_smooth(depth01, cfg.depth_sigma, ksize)
            lo, hi = depth01.min(), depth01.max()
            depth01 = (depth01 - lo) / max(hi - lo, 1e-12)
        depth = cfg.zmin + (cfg.zmax - cfg.zmin) * depth01
        grid = np.stack([xs, ys], axis=-1).reshape(-1, 2)
        images, depths = [], []
        for k, P in enumerate(poses):
            if k == 0:
                vals = base.copy().ravel()
            else:
                warped, in_front = geometry.warp_pixel(P, K, grid, depth.reshape(-1))
                u = np.where(in_front, warped[:, 0], 0.0)
                v = np.where(in_front, warped[:, 1], 0.0)
                _, in_image = imgproc.bilinear_sample(base, u, v)
                visible = float(np.mean(in_front & in_image))
                if visible < 0.5:
                    raise ValueError(
                        f"per-frame twist too large: {visible:.0%} of pixels in view at frame {k}"
                    )
                # edge-clamped fill outside the base image keeps frames smooth
                vals, _ = imgproc.bilinear_sample(
                    base, np.clip(u, 0, w - 1), np.clip(v, 0, h - 1)
                )
            if cfg.noise_sigma > 0:
                vals = vals + rng.normal(0.0, cfg.noise_sigma, size=vals.shape)
            img = np.clip(np.round(vals), 0, 255).astype(np.uint8).reshape(h, w)
            images.append(_corrupt(img, k, cfg))
            depths.append(depth.copy())
    times = [k * cfg.dt for k in range(n_frames)]
    return SyntheticSequence(images, depths, poses, times, K, cfg)


def write_synthetic(seq: SyntheticSequence, root) -> None:
    """Write a synthetic sequence as a TUM-style directory.

    Produces frames/<k>.pgm, depth/<k>.png (16-bit, 1/5000 m units),
    rgb.txt, depth.txt, calib.txt, and groundtruth.txt (TUM pose format).
    """
    from . import trajectory as trajectory_io

    root = os.fspath(root)
    os.makedirs(os.path.join(root, "frames"), exist_ok=True)
    os.makedirs(os.path.join(root, "depth"), exist_ok=True)
    rgb_lines, depth_lines = [], []
    for k, (img, depth, t) in enumerate(zip(seq.images, seq.depths, seq.times)):
        img_rel = f"frames/{k:06d}.pgm"
        depth_rel = f"depth/{k:06d}.png"
        imgproc.save_pgm(os.path.join(root, img_rel), img)
        d = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0)
        imgproc.save_png16(
            os.path.join(root, depth_rel),
            np.clip(np.round(d * TUM_DEPTH_SCALE), 0, 65535).astype(np.uint16),
        )
        rgb_lines.append(f"{t:.6f} {img_rel}")
        depth_lines.append(f"{t:.6f} {depth_rel}")
    with open(os.path.join(root, "rgb.txt"), "w") as f:
        f.write("# timestamp filename\n" + "\n".join(rgb_lines) + "\n")
    with open(os.path.join(root, "depth.txt"), "w") as f:
        f.write("# timestamp filename\n" + "\n".join(depth_lines) + "\n")
    geometry.save_intrinsics(os.path.join(root, "calib.txt"), seq.intrinsics)
    trajectory_io.save_tum(os.path.join(root, "groundtruth.txt"), seq.trajectory())
