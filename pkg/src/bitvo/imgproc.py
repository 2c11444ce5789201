"""Grayscale image primitives shared by the rest of the stack.

Images are plain 2D numpy arrays: uint8 for camera frames, float64 for
everything derived from them. Multi-channel descriptor stacks use shape
(C, H, W) and are smoothed/sampled along the last two axes.
"""

from __future__ import annotations

import numpy as np
from PIL import Image as _PILImage
from scipy.ndimage import correlate1d

PYRAMID_MIN_DIM = 40


def gaussian_kernel1d(sigma: float, ksize: int) -> np.ndarray:
    """Normalized 1D Gaussian taps of odd width `ksize`."""
    if ksize < 1 or ksize % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {ksize}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    r = ksize // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_smooth(img: np.ndarray, sigma: float, ksize: int = 3) -> np.ndarray:
    """Separable Gaussian filter with edge replication at the borders.

    Works on a single (H, W) image or a (C, H, W) channel stack; the filter
    runs along the last two axes. `ksize=1` is the identity (returns a
    float64 copy).
    """
    out = np.asarray(img, dtype=np.float64)
    if ksize == 1:
        return out.copy()
    k = gaussian_kernel1d(sigma, ksize)
    out = correlate1d(out, k, axis=-1, mode="nearest")
    out = correlate1d(out, k, axis=-2, mode="nearest")
    return out


def compute_num_levels(width: int, height: int, min_dim: int = PYRAMID_MIN_DIM) -> int:
    """Largest L such that min(width, height) / 2**(L-1) >= min_dim (at least 1)."""
    m = min(int(width), int(height))
    if m < min_dim:
        return 1
    levels = 1
    while m / (2 ** levels) >= min_dim:
        levels += 1
    return levels


def build_pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    """Coarse-to-fine image pyramid; index 0 is the input (finest) level.

    Each coarser level is the previous one smoothed with a 3x3 Gaussian
    (sigma=1.0) and decimated 2x at half-pixel centers (2x2 block mean, so
    mean intensity is preserved); level k has floor(dim / 2**k) pixels per
    axis.
    """
    base = np.asarray(img, dtype=np.float64)
    if base.ndim != 2:
        raise ValueError("expected a 2D image")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    h, w = base.shape
    if min(h, w) >> (levels - 1) < 1:
        raise ValueError(f"{levels} levels would shrink a {w}x{h} image below 1 pixel")
    pyr = [base.copy()]
    for _ in range(1, levels):
        sm = gaussian_smooth(pyr[-1], 1.0, 3)
        h2, w2 = sm.shape[0] // 2, sm.shape[1] // 2
        pyr.append(
            0.25
            * (
                sm[: 2 * h2 : 2, : 2 * w2 : 2]
                + sm[1 : 2 * h2 : 2, : 2 * w2 : 2]
                + sm[: 2 * h2 : 2, 1 : 2 * w2 : 2]
                + sm[1 : 2 * h2 : 2, 1 : 2 * w2 : 2]
            )
        )
    return pyr


def gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradient ((I(x+1) - I(x-1)) / 2 per axis).

    Border rows/columns are set to 0. Returns (gx, gy).
    """
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape
    if h < 3 or w < 3:
        raise ValueError(f"image too small for gradients: {w}x{h}")
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, 1:-1] = 0.5 * (a[:, 2:] - a[:, :-2])
    gy[1:-1, :] = 0.5 * (a[2:, :] - a[:-2, :])
    return gx, gy


def _sample_indices(shape, x, y):
    """Shared index/weight computation for bilinear sampling."""
    h, w = shape
    xs = np.asarray(x, dtype=np.float64)
    ys = np.asarray(y, dtype=np.float64)
    valid = (
        np.isfinite(xs)
        & np.isfinite(ys)
        & (xs >= 0.0)
        & (xs <= w - 1.0)
        & (ys >= 0.0)
        & (ys <= h - 1.0)
    )
    xc = np.where(valid, xs, 0.0)
    yc = np.where(valid, ys, 0.0)
    x0 = np.clip(np.floor(xc).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(yc).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xc - x0
    fy = yc - y0
    w00 = (1.0 - fx) * (1.0 - fy)
    w10 = fx * (1.0 - fy)
    w01 = (1.0 - fx) * fy
    w11 = fx * fy
    return valid, (y0, x0, y1, x1), (w00, w10, w01, w11)


def bilinear_sample(img: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear interpolation with an explicit validity mask.

    Coordinates outside [0, w-1] x [0, h-1] are invalid: their value is 0
    and the mask entry False (callers give such samples zero weight).
    Integer coordinates reproduce the pixel value exactly. Scalar inputs
    return scalar outputs.
    """
    a = np.asarray(img, dtype=np.float64)
    scalar = np.ndim(x) == 0 and np.ndim(y) == 0
    valid, (y0, x0, y1, x1), (w00, w10, w01, w11) = _sample_indices(a.shape, x, y)
    v = a[y0, x0] * w00 + a[y0, x1] * w10 + a[y1, x0] * w01 + a[y1, x1] * w11
    v = np.where(valid, v, 0.0)
    if scalar:
        return float(v), bool(valid)
    return v, valid


def sample_channels(channels: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear sampling of a (C, H, W) stack at shared coordinates.

    Returns values of shape (C, N) and a per-coordinate validity mask (N,).
    """
    c = np.asarray(channels, dtype=np.float64)
    valid, (y0, x0, y1, x1), (w00, w10, w01, w11) = _sample_indices(c.shape[-2:], x, y)
    v = (
        c[:, y0, x0] * w00
        + c[:, y0, x1] * w10
        + c[:, y1, x0] * w01
        + c[:, y1, x1] * w11
    )
    v[:, ~valid] = 0.0
    return v, valid


# ---------------------------------------------------------------------------
# file IO (8-bit grayscale PNG/PGM in, 16-bit PNG for depth/disparity)


def load_gray(path) -> np.ndarray:
    """Load an 8-bit grayscale image (PNG/PGM). 16-bit input is scaled down."""
    with _PILImage.open(path) as im:
        arr = np.array(im)
    if arr.ndim == 3:
        arr = np.array(_PILImage.open(path).convert("L"))
    if arr.dtype == np.uint8:
        return arr
    if arr.dtype in (np.uint16, np.int32, np.uint32):
        return (arr.astype(np.uint32) >> 8).astype(np.uint8)
    raise ValueError(f"unsupported intensity image dtype {arr.dtype} in {path}")


def load_u16(path) -> np.ndarray:
    """Load a 16-bit single-channel PNG as uint16."""
    with _PILImage.open(path) as im:
        arr = np.array(im)
    if arr.ndim != 2:
        raise ValueError(f"expected single-channel image in {path}")
    return arr.astype(np.uint16)


def save_pgm(path, img: np.ndarray) -> None:
    """Write an 8-bit grayscale PGM."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = np.clip(np.round(a), 0, 255).astype(np.uint8)
    _PILImage.fromarray(a, mode="L").save(path, format="PPM")


def save_png16(path, arr: np.ndarray) -> None:
    """Write a 16-bit single-channel PNG."""
    a = np.asarray(arr).astype(np.uint16)
    _PILImage.fromarray(a).save(path, format="PNG")
