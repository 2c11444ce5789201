"""Direct visual odometry on binary descriptor channels (Bit-Planes).

Pose is estimated by inverse-compositional Gauss-Newton over an 8-channel
binary descriptor whose squared-difference residuals equal the Hamming
distance of the packed census bytes, making the alignment invariant to any
monotonic intensity change.

Set BITVO_NUM_THREADS to bound the BLAS/OpenMP thread pools; it must take
effect before numpy loads, hence the env shim below.
"""

import os as _os

_threads = _os.environ.get("BITVO_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .descriptor import (
    CensusImage,
    ChannelStack,
    census_transform,
    compute_bitplanes,
    hamming_equivalence_check,
    intensity_channels,
    saliency,
)
from .evaluation import AteReport, RpeReport, evaluate_ate, evaluate_rpe
from .exceptions import (
    AmbiguousRotationError,
    BitvoError,
    DegenerateSystemError,
    DegradedKeyframeError,
    EmptySelectionError,
    InvalidDepthError,
    MissingDepthError,
)
from .geometry import (
    Intrinsics,
    backproject,
    invert_rigid,
    load_intrinsics,
    project,
    se3_exp,
    se3_log,
    warp_pixel,
)
from .imgproc import bilinear_sample, build_pyramid, compute_num_levels, gaussian_smooth, gradient
from .pipeline import FrameResult, Keyframe, KeyframeConfig, VisualOdometry, make_keyframe
from .solver import OptimizeStats, SolverConfig, optimize_pyramid, select_pixels

__version__ = "0.1.0"

__all__ = [
    "AmbiguousRotationError",
    "AteReport",
    "BitvoError",
    "CensusImage",
    "ChannelStack",
    "DegenerateSystemError",
    "DegradedKeyframeError",
    "EmptySelectionError",
    "FrameResult",
    "Intrinsics",
    "InvalidDepthError",
    "Keyframe",
    "KeyframeConfig",
    "MissingDepthError",
    "OptimizeStats",
    "RpeReport",
    "SolverConfig",
    "VisualOdometry",
    "backproject",
    "bilinear_sample",
    "build_pyramid",
    "census_transform",
    "compute_bitplanes",
    "compute_num_levels",
    "evaluate_ate",
    "evaluate_rpe",
    "gaussian_smooth",
    "gradient",
    "hamming_equivalence_check",
    "intensity_channels",
    "invert_rigid",
    "load_intrinsics",
    "make_keyframe",
    "optimize_pyramid",
    "project",
    "saliency",
    "se3_exp",
    "se3_log",
    "select_pixels",
    "warp_pixel",
]
