"""Inverse-compositional Gauss-Newton on descriptor channels with Tukey IRLS.

The reference (keyframe) side owns the linearization: channel gradients,
warp derivatives, and the stacked Jacobian rows are computed once per
keyframe level. Each iteration then only warps the selected pixels, samples
the current frame's channels, reweights, and solves a 6x6 system.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
import scipy.linalg

from . import geometry, imgproc
from .descriptor import ChannelStack
from .exceptions import DegenerateSystemError, EmptySelectionError
from .geometry import Intrinsics

TUKEY_TAU = 4.6851  # 95% asymptotic efficiency under Gaussian noise
NUM_POSE_PARAMS = 6


@dataclass
class SolverConfig:
    """Optimizer and descriptor settings (key=value config file compatible)."""

    tau: float = TUKEY_TAU
    sigma_floor: float = 1e-6
    max_iterations: int = 50
    rel_tol: float = 1e-6
    sigma_pre: float = 0.5
    sigma_channel: float = 0.5
    mode: str = "bitplanes"  # or "raw-intensity"
    nms_min_width: int = 320
    nms_min_height: int = 240

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.mode not in ("bitplanes", "raw-intensity"):
            raise ValueError(f"mode must be 'bitplanes' or 'raw-intensity', got {self.mode!r}")

    @classmethod
    def from_file(cls, path) -> "SolverConfig":
        return cls(**parse_config_file(path))

    def with_overrides(self, **kwargs) -> "SolverConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def parse_config_file(path) -> dict:
    """Parse a `key = value` config file into SolverConfig keyword arguments."""
    types = {f.name: f.type for f in fields(SolverConfig)}
    out = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{ln}: unknown config key {key!r}")
            if key == "mode":
                out[key] = value
            elif key in ("max_iterations", "nms_min_width", "nms_min_height"):
                out[key] = int(value)
            else:
                out[key] = float(value)
    return out


@dataclass
class PixelSelection:
    """Selected reference pixels (integer coordinates) and their depths."""

    xs: np.ndarray
    ys: np.ndarray
    depths: np.ndarray

    def __len__(self) -> int:
        return len(self.xs)

    @property
    def xy(self) -> np.ndarray:
        return np.stack([self.xs, self.ys], axis=-1).astype(np.float64)


@dataclass
class JacobianCache:
    """Stacked 1x6 rows (pixel-major, channel within pixel) and their Gram matrix."""

    rows: np.ndarray  # (N*C, 6)
    jtj: np.ndarray  # (6, 6)


@dataclass
class Residuals:
    """Per (pixel, channel) residuals with a validity mask for bad warps."""

    values: np.ndarray  # (N*C,)
    valid: np.ndarray  # (N*C,) bool

    @property
    def num_valid(self) -> int:
        return int(np.count_nonzero(self.valid))


@dataclass
class KeyframeLevel:
    """Everything the optimizer needs about one pyramid level of the keyframe."""

    selection: PixelSelection
    jacobian: JacobianCache
    ref_values: np.ndarray  # (N, C) descriptor values at the selected pixels
    intrinsics: Intrinsics

    @property
    def num_channels(self) -> int:
        return self.ref_values.shape[1]


@dataclass
class OptimizeStats:
    iterations_per_level: list = field(default_factory=list)  # coarse-to-fine order
    final_objective: float = 0.0
    converged: bool = True
    good_fraction: float = float("nan")
    num_selected: int = 0
    num_valid: int = 0
    final_weights: np.ndarray | None = None  # finest level, (N*C,)
    final_valid: np.ndarray | None = None


def select_pixels(
    sal: np.ndarray,
    depth: np.ndarray,
    nms_min_width: int = 320,
    nms_min_height: int = 240,
) -> PixelSelection:
    """Pick reference pixels from a saliency map where depth is valid.

    At or above `nms_min_width x nms_min_height` only strict 3x3 local
    maxima of the saliency are kept; below that every pixel with nonzero
    saliency is used. Raises EmptySelectionError when nothing qualifies.
    """
    sal = np.asarray(sal, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if sal.shape != depth.shape:
        raise ValueError(f"saliency {sal.shape} and depth {depth.shape} dimensions differ")
    h, w = sal.shape
    mask = (sal > 0) & np.isfinite(depth) & (depth > 0)
    if w >= nms_min_width and h >= nms_min_height:
        # edge-replicated pad: border pixels compare against themselves and
        # can never be strict maxima
        padded = np.pad(sal, 1, mode="edge")
        strict = np.ones_like(mask)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                strict &= sal > padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        mask &= strict
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise EmptySelectionError("no pixels with positive saliency and valid depth")
    return PixelSelection(xs.astype(np.int64), ys.astype(np.int64), depth[ys, xs])


def warp_jacobian(K: Intrinsics, X: np.ndarray) -> np.ndarray:
    """2x6 derivative of the warped pixel w.r.t. the twist at theta = 0.

    X is (N, 3) camera-frame points; parameter order is [omega, nu].
    """
    x, y, z = X[:, 0], X[:, 1], X[:, 2]
    iz = 1.0 / z
    xz = x * iz
    yz = y * iz
    J = np.empty((X.shape[0], 2, 6), dtype=np.float64)
    # du/d[omega, nu]
    J[:, 0, 0] = -K.fx * xz * yz
    J[:, 0, 1] = K.fx * (1.0 + xz * xz)
    J[:, 0, 2] = -K.fx * yz
    J[:, 0, 3] = K.fx * iz
    J[:, 0, 4] = 0.0
    J[:, 0, 5] = -K.fx * xz * iz
    # dv/d[omega, nu]
    J[:, 1, 0] = -K.fy * (1.0 + yz * yz)
    J[:, 1, 1] = K.fy * xz * yz
    J[:, 1, 2] = K.fy * xz
    J[:, 1, 3] = 0.0
    J[:, 1, 4] = K.fy * iz
    J[:, 1, 5] = -K.fy * yz * iz
    return J


def precompute_jacobian(bp_ref: ChannelStack, sel: PixelSelection, K: Intrinsics) -> JacobianCache:
    """Chain-rule Jacobian rows g = grad(Phi_i) . dwarp/dtheta for every
    selected pixel and channel, plus the accumulated 6x6 Gram matrix."""
    if len(sel) == 0:
        raise ValueError("pixel selection is empty")
    if not np.all(np.isfinite(sel.depths)) or np.any(sel.depths <= 0):
        raise ValueError("selection contains invalid depths")
    n = len(sel)
    c = bp_ref.num_channels
    grads = np.empty((n, c, 2), dtype=np.float64)
    for i in range(c):
        gx, gy = imgproc.gradient(bp_ref.channels[i])
        grads[:, i, 0] = gx[sel.ys, sel.xs]
        grads[:, i, 1] = gy[sel.ys, sel.xs]
    X = geometry.backproject(K, sel.xy, sel.depths)
    Jw = warp_jacobian(K, X)
    rows = np.einsum("ncd,nde->nce", grads, Jw).reshape(n * c, NUM_POSE_PARAMS)
    jtj = rows.T @ rows
    return JacobianCache(rows=rows, jtj=0.5 * (jtj + jtj.T))


def reference_values(bp_ref: ChannelStack, sel: PixelSelection) -> np.ndarray:
    """Descriptor values at the selected (integer) reference pixels, shape (N, C)."""
    return bp_ref.channels[:, sel.ys, sel.xs].T.copy()


def compute_residuals(
    bp_cur: ChannelStack,
    ref_values: np.ndarray,
    sel: PixelSelection,
    T: np.ndarray,
    K: Intrinsics,
) -> Residuals:
    """r(p, i) = Phi'_i(warp(p)) - Phi_i(p), with invalid warps masked out."""
    warped, in_front = geometry.warp_pixel(T, K, sel.xy, sel.depths)
    vals, in_image = imgproc.sample_channels(bp_cur.channels, warped[:, 0], warped[:, 1])
    valid_px = in_front & in_image
    r = vals.T - ref_values  # (N, C)
    c = r.shape[1]
    valid = np.repeat(valid_px, c)
    values = r.reshape(-1)
    values = np.where(valid, values, 0.0)
    return Residuals(values=values, valid=valid)


def robust_sigma(
    res: Residuals,
    p_params: int = NUM_POSE_PARAMS,
    sigma_floor: float = 1e-6,
) -> float:
    """Robust scale 1.4826 * (1 + 5/(m - p)) * median|r| over valid residuals."""
    m = res.num_valid
    if m <= p_params:
        raise DegenerateSystemError(f"{m} valid residuals for {p_params} parameters")
    med = float(np.median(np.abs(res.values[res.valid])))
    sigma = 1.4826 * (1.0 + 5.0 / (m - p_params)) * med
    return max(sigma, sigma_floor)


def tukey_weights(res: Residuals, sigma: float, tau: float = TUKEY_TAU) -> np.ndarray:
    """Tukey biweight per residual entry; invalid entries get weight 0."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    u = res.values / (tau * sigma)
    w = np.where(np.abs(u) <= 1.0, (1.0 - u * u) ** 2, 0.0)
    w[~res.valid] = 0.0
    return w


def solve_normal_equations(
    cache: JacobianCache, res: Residuals, weights: np.ndarray
) -> np.ndarray:
    """Solve (J^T W J) delta = J^T W e by Cholesky factorization."""
    A = cache.rows.T @ (cache.rows * weights[:, None])
    b = cache.rows.T @ (weights * res.values)
    try:
        cho = scipy.linalg.cho_factor(A, lower=True)
        delta = scipy.linalg.cho_solve(cho, b)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as e:
        raise DegenerateSystemError(f"normal equations not SPD: {e}") from e
    if not np.all(np.isfinite(delta)):
        raise DegenerateSystemError("non-finite solution of the normal equations")
    return delta


def ic_update(T: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Inverse-compositional pose update T <- T . exp(delta)^-1."""
    return np.asarray(T, dtype=np.float64) @ geometry.invert_rigid(geometry.se3_exp(delta))


@dataclass
class LevelResult:
    pose: np.ndarray
    iterations: int
    objective: float
    converged: bool
    weights: np.ndarray | None
    valid: np.ndarray | None


def optimize_level(
    level: KeyframeLevel,
    bp_cur: ChannelStack,
    T0: np.ndarray,
    cfg: SolverConfig,
) -> LevelResult:
    """IRLS Gauss-Newton at one pyramid level.

    Iterates residuals -> robust scale -> Tukey weights -> normal equations
    -> IC update until the relative parameter change or relative objective
    reduction drops below `rel_tol`, or `max_iterations` is hit. A
    degenerate system on the first iteration propagates; afterwards the
    last good estimate is returned with converged=False.
    """
    T = np.array(T0, dtype=np.float64)
    theta_acc = np.zeros(NUM_POSE_PARAMS)
    f_prev = None
    objective = 0.0
    converged = False
    iterations = 0
    weights = None
    valid = None
    for it in range(cfg.max_iterations):
        res = compute_residuals(bp_cur, level.ref_values, level.selection, T, level.intrinsics)
        try:
            sigma = robust_sigma(res, NUM_POSE_PARAMS, cfg.sigma_floor)
            w = tukey_weights(res, sigma, cfg.tau)
            objective = float(np.dot(w, res.values * res.values))
            delta = solve_normal_equations(level.jacobian, res, w)
        except DegenerateSystemError:
            if it == 0:
                raise
            converged = False
            break
        T = ic_update(T, delta)
        theta_acc += delta
        iterations = it + 1
        weights = w
        valid = res.valid
        step = np.linalg.norm(delta) / max(np.linalg.norm(theta_acc), 1e-12)
        if step < cfg.rel_tol:
            converged = True
            break
        if f_prev is not None and abs(f_prev - objective) / max(f_prev, 1e-12) < cfg.rel_tol:
            converged = True
            break
        f_prev = objective
    return LevelResult(T, iterations, objective, converged, weights, valid)


def optimize_pyramid(
    levels: list[KeyframeLevel],
    bp_cur: list[ChannelStack],
    T0: np.ndarray,
    cfg: SolverConfig,
) -> tuple[np.ndarray, OptimizeStats]:
    """Coarse-to-fine optimization across pyramid levels (index 0 = finest).

    Each level is seeded with the previous level's estimate; level failures
    on the first iteration propagate.
    """
    if len(levels) != len(bp_cur):
        raise ValueError("keyframe and current pyramids are not level-aligned")
    T = np.array(T0, dtype=np.float64)
    stats = OptimizeStats()
    finest = None
    for k in reversed(range(len(levels))):
        result = optimize_level(levels[k], bp_cur[k], T, cfg)
        T = result.pose
        stats.iterations_per_level.append(result.iterations)
        finest = result
    stats.final_objective = finest.objective
    stats.converged = finest.converged
    stats.num_selected = len(levels[0].selection)
    stats.final_weights = finest.weights
    stats.final_valid = finest.valid
    if finest.valid is not None:
        c = levels[0].num_channels
        stats.num_valid = int(np.count_nonzero(finest.valid.reshape(-1, c)[:, 0]))
    return T, stats
