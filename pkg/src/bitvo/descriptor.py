"""Census byte descriptor, the 8-channel bit-plane stack, and pixel saliency.

The census byte packs eight neighbor-vs-center comparisons; the bit-plane
stack stores each comparison as its own raster so a squared-difference
residual over the channels equals the Hamming distance between the packed
bytes. Both stay bit-identical under any strictly monotonic intensity map.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import imgproc

# Neighbor order and bit weights of the packed byte. Offset i contributes
# 2**i when neighbor(center + offset) compares true against the center.
NEIGHBOR_OFFSETS = np.array(
    [[-1, -1], [0, -1], [1, -1], [1, 0], [-1, 0], [-1, 1], [0, 1], [1, 1]],
    dtype=np.int64,
)

_COMPARE = {
    ">": np.greater,
    ">=": np.greater_equal,
    "<": np.less,
    "<=": np.less_equal,
}

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)


@dataclass
class CensusImage:
    """Packed 8-bit comparison codes with a validity mask (border is invalid)."""

    values: np.ndarray  # (H, W) uint8
    valid: np.ndarray  # (H, W) bool

    @property
    def shape(self):
        return self.values.shape


@dataclass
class ChannelStack:
    """Descriptor channels as an (C, H, W) float stack.

    `margin` is the width of the border band whose values depend on
    replicated out-of-image neighbors and must not feed gradients.
    """

    channels: np.ndarray
    margin: int

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def shape(self):
        return self.channels.shape[-2:]


def _neighbor_views(img: np.ndarray):
    """Edge-replicated shifted views of `img`, one per census neighbor."""
    h, w = img.shape
    padded = np.pad(img, 1, mode="edge")
    for dx, dy in NEIGHBOR_OFFSETS:
        yield padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]


def census_transform(img: np.ndarray, op: str = ">") -> CensusImage:
    """Pack the eight neighbor-vs-center comparisons into one byte per pixel.

    bit i of the byte is [I(x + offset_i) op I(x)]. The one-pixel border is
    flagged invalid. `op` is one of > >= < <=.
    """
    a = np.asarray(img)
    if a.ndim != 2 or a.shape[0] < 3 or a.shape[1] < 3:
        raise ValueError("census transform needs a 2D image of at least 3x3")
    if op not in _COMPARE:
        raise ValueError(f"comparison operator must be one of {sorted(_COMPARE)}, got {op!r}")
    cmp = _COMPARE[op]
    out = np.zeros(a.shape, dtype=np.uint8)
    for i, nb in enumerate(_neighbor_views(a)):
        out |= cmp(nb, a).astype(np.uint8) << np.uint8(i)
    valid = np.zeros(a.shape, dtype=bool)
    valid[1:-1, 1:-1] = True
    return CensusImage(out, valid)


def _comparison_channels(img: np.ndarray, op: str) -> np.ndarray:
    cmp = _COMPARE[op]
    out = np.empty((8, *img.shape), dtype=np.float64)
    for i, nb in enumerate(_neighbor_views(img)):
        out[i] = cmp(nb, img)
    return out


def compute_bitplanes(
    img: np.ndarray,
    sigma_pre: float = 0.5,
    sigma_channel: float = 0.5,
    op: str = ">",
) -> ChannelStack:
    """Compute the 8 bit-plane channels of an image.

    The image is first smoothed with a 3x3 Gaussian (`sigma_pre`; 0
    disables), each comparison is stored as its own {0, 1} channel, and the
    channels are then optionally smoothed (3x3, `sigma_channel`; 0
    disables). Before channel smoothing, packing channel i with weight 2**i
    reproduces the census byte of the (smoothed) image exactly.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 3 or a.shape[1] < 3:
        raise ValueError("bit-planes need a 2D image of at least 3x3")
    if op not in _COMPARE:
        raise ValueError(f"comparison operator must be one of {sorted(_COMPARE)}, got {op!r}")
    if sigma_pre > 0:
        a = imgproc.gaussian_smooth(a, sigma_pre, 3)
    channels = _comparison_channels(a, op)
    margin = 1
    if sigma_channel > 0:
        # clip away convolution roundoff so the [0, 1] range holds exactly
        channels = np.clip(imgproc.gaussian_smooth(channels, sigma_channel, 3), 0.0, 1.0)
        margin = 2
    return ChannelStack(channels, margin)


def intensity_channels(img: np.ndarray, sigma_pre: float = 0.5) -> ChannelStack:
    """Raw-intensity fallback descriptor: one channel, the (smoothed) image itself."""
    a = np.asarray(img, dtype=np.float64)
    if sigma_pre > 0:
        a = imgproc.gaussian_smooth(a, sigma_pre, 3)
    return ChannelStack(a[None, :, :].copy(), 0)


def saliency(bp: ChannelStack) -> np.ndarray:
    """Per-pixel sum of absolute channel gradients, G = sum_i |dx Phi_i| + |dy Phi_i|.

    The band of pixels whose gradients touch invalid descriptor values is
    zeroed so selection can skip it.
    """
    g = np.zeros(bp.shape, dtype=np.float64)
    for i in range(bp.num_channels):
        gx, gy = imgproc.gradient(bp.channels[i])
        g += np.abs(gx) + np.abs(gy)
    ring = bp.margin + 1
    g[:ring, :] = 0.0
    g[-ring:, :] = 0.0
    g[:, :ring] = 0.0
    g[:, -ring:] = 0.0
    return g


def expand_bits(census_values: np.ndarray) -> np.ndarray:
    """Unpack census bytes into an (8, ...) stack of {0, 1} floats (bit i first)."""
    v = np.asarray(census_values, dtype=np.uint8)
    bits = np.unpackbits(v[..., None], axis=-1, bitorder="little")
    return np.moveaxis(bits, -1, 0).astype(np.float64)


def hamming_equivalence_check(a: CensusImage, b: CensusImage) -> tuple[int, float]:
    """Hamming distance and bit-plane SSD over jointly valid pixels.

    The two are computed by independent routes (popcount of XOR vs squared
    differences of unpacked bit vectors) and are equal by construction of
    the descriptor: each differing bit contributes exactly 1 to both.
    """
    if a.shape != b.shape:
        raise ValueError(f"census image dimensions differ: {a.shape} vs {b.shape}")
    mask = a.valid & b.valid
    av = a.values[mask]
    bv = b.values[mask]
    hamming = int(_POPCOUNT[np.bitwise_xor(av, bv)].sum())
    diff = expand_bits(av) - expand_bits(bv)
    ssd = float(np.sum(diff * diff))
    return hamming, ssd


def dump_census_pgm(census: CensusImage, path) -> None:
    """Write the packed census bytes as a PGM for inspection."""
    imgproc.save_pgm(path, census.values)


def dump_channels_pgm(bp: ChannelStack, directory, prefix: str = "channel") -> None:
    """Write each descriptor channel as `<prefix>_<i>.pgm`, scaled to 0..255."""
    os.makedirs(directory, exist_ok=True)
    for i in range(bp.num_channels):
        ch = bp.channels[i]
        lo, hi = float(ch.min()), float(ch.max())
        scale = 255.0 / (hi - lo) if hi > lo else 0.0
        imgproc.save_pgm(os.path.join(directory, f"{prefix}_{i}.pgm"), (ch - lo) * scale)
