"""Shared fixtures and oracle helpers for the test suite."""

import numpy as np
import pytest

from bitvo import datasets
from bitvo.geometry import Intrinsics


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_twist(rng, max_angle=np.pi - 1e-3, max_trans=5.0):
    """Uniform random twist with rotation magnitude below `max_angle`."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    w = axis * rng.uniform(0.0, max_angle)
    v = rng.uniform(-max_trans, max_trans, size=3)
    return np.concatenate([w, v])


def smooth_test_image(rng, h, w, sigma=1.5):
    """Band-limited random texture, uint8."""
    from bitvo import imgproc

    noise = rng.uniform(0, 255, size=(h, w))
    ksize = 2 * int(np.ceil(2 * sigma)) + 1
    sm = imgproc.gaussian_smooth(noise, sigma, ksize)
    lo, hi = sm.min(), sm.max()
    return np.round(25 + (sm - lo) * (205.0 / (hi - lo))).astype(np.uint8)


def make_scene(seed=0, width=128, height=96, twist=(0.002, -0.001, 0.0015, 0.02, -0.01, 0.012),
               n_frames=2, z0=4.0, fx=100.0, corruption="none", texture_sigma=1.5, **kwargs):
    """Small synthetic scene with exact ground truth for solver tests.

    The dense default texture (sigma 1.5) keeps census edges frequent, which
    the robust reweighting needs for a healthy residual scale estimate.
    """
    cfg = datasets.SynthConfig(
        width=width,
        height=height,
        seed=seed,
        z0=z0,
        intrinsics=Intrinsics(fx=fx, fy=fx, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0),
        twist=tuple(twist),
        corruption=corruption,
        texture_sigma=texture_sigma,
        **kwargs,
    )
    return datasets.generate_synthetic(cfg, n_frames)


def build_level(seq, cfg, frame=0):
    """Single-level keyframe data for solver tests (finest level only)."""
    from bitvo import descriptor, pipeline, solver

    bp = pipeline.compute_channels(seq.images[frame], cfg)
    sal = descriptor.saliency(bp)
    sel = solver.select_pixels(sal, seq.depths[frame], cfg.nms_min_width, cfg.nms_min_height)
    cache = solver.precompute_jacobian(bp, sel, seq.intrinsics)
    ref = solver.reference_values(bp, sel)
    return solver.KeyframeLevel(sel, cache, ref, seq.intrinsics), bp


def fd_jacobian_rows(bp, sel, K, step=1e-5):
    """Central finite differences of the sampled channels w.r.t. the twist."""
    import numpy as np

    from bitvo import geometry, imgproc

    n = len(sel)
    c = bp.num_channels
    rows = np.zeros((n, c, 6))
    for j in range(6):
        sampled = {}
        for sgn in (+1.0, -1.0):
            theta = np.zeros(6)
            theta[j] = sgn * step
            T = geometry.se3_exp(theta)
            warped, ok = geometry.warp_pixel(T, K, sel.xy, sel.depths)
            vals, ok2 = imgproc.sample_channels(bp.channels, warped[:, 0], warped[:, 1])
            assert (ok & ok2).all(), "FD probe left the image"
            sampled[sgn] = vals
        rows[:, :, j] = (sampled[1.0] - sampled[-1.0]).T / (2.0 * step)
    return rows
