"""SE(3) parameterization, pinhole projection, and the depth-based pixel warp.

Conventions: x right, y down, z forward; pixel (0, 0) at the top-left.
Rigid transforms are 4x4 homogeneous float64 matrices. Twists stack as
theta = [omega, nu] with omega the rotational part in radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import AmbiguousRotationError, InvalidDepthError

SMALL_ANGLE = 1e-8
BEHIND_CAMERA_EPS = 1e-6


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole calibration in pixels; baseline (meters) only for stereo input."""

    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float | None = None

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")

    def scaled(self, level: int) -> "Intrinsics":
        """Intrinsics for pyramid level `level` (halved per octave).

        The principal point also picks up a quarter-pixel shift per octave
        because pyramid decimation samples 2x2 block centers: level-k pixel
        u_k sits at level-0 coordinate 2**k * u_k + (2**k - 1) / 2.
        """
        s = float(2 ** level)
        off = 0.5 * (1.0 - 1.0 / s)
        return Intrinsics(
            self.fx / s, self.fy / s, self.cx / s - off, self.cy / s - off, self.baseline
        )


def load_intrinsics(path) -> Intrinsics:
    """Parse a calibration file: one line `fx fy cx cy [baseline]`, `#` comments."""
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) == 4:
                return Intrinsics(*vals)
            if len(vals) == 5:
                return Intrinsics(vals[0], vals[1], vals[2], vals[3], vals[4])
            raise ValueError(f"calibration line must have 4 or 5 values, got {len(vals)}")
    raise ValueError(f"no calibration data found in {path}")


def save_intrinsics(path, K: Intrinsics) -> None:
    with open(path, "w") as f:
        f.write("# fx fy cx cy [baseline]\n")
        vals = [K.fx, K.fy, K.cx, K.cy] + ([K.baseline] if K.baseline is not None else [])
        f.write(" ".join(f"{v:.9g}" for v in vals) + "\n")


def hat(w) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector."""
    x, y, z = np.asarray(w, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _left_jacobian(w: np.ndarray) -> np.ndarray:
    """The matrix A(omega) mapping nu to the translation of exp([omega, nu])."""
    th = float(np.linalg.norm(w))
    if th < SMALL_ANGLE:
        return np.eye(3) + 0.5 * hat(w)
    u = hat(w / th)
    return np.eye(3) + ((1.0 - np.cos(th)) / th) * u + ((th - np.sin(th)) / th) * (u @ u)


def se3_exp(theta) -> np.ndarray:
    """Closed-form exponential map from a 6-vector twist to a 4x4 rigid transform."""
    theta = np.asarray(theta, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(theta)):
        raise ValueError("twist must be finite")
    w, v = theta[:3], theta[3:]
    th = float(np.linalg.norm(w))
    if th < SMALL_ANGLE:
        hw = hat(w)
        R = np.eye(3) + hw + 0.5 * (hw @ hw)
    else:
        u = hat(w / th)
        R = np.eye(3) + np.sin(th) * u + (1.0 - np.cos(th)) * (u @ u)
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = _left_jacobian(w) @ v
    return T


def se3_log(T) -> np.ndarray:
    """Inverse of se3_exp; requires the rotation angle to be below pi - 1e-6."""
    T = np.asarray(T, dtype=np.float64)
    R = T[:3, :3]
    t = T[:3, 3]
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = 0.5 * np.linalg.norm(vee)  # sin(theta) for theta in [0, pi]
    c = 0.5 * (np.trace(R) - 1.0)
    th = float(np.arctan2(s, c))
    if th > np.pi - 1e-6:
        raise AmbiguousRotationError(f"rotation angle {th} too close to pi")
    if th < SMALL_ANGLE:
        w = 0.5 * vee
    else:
        w = (th / (2.0 * s)) * vee
    v = np.linalg.solve(_left_jacobian(w), t)
    return np.concatenate([w, v])


def invert_rigid(T) -> np.ndarray:
    """Closed-form inverse of a rigid transform."""
    T = np.asarray(T, dtype=np.float64)
    out = np.eye(4)
    Rt = T[:3, :3].T
    out[:3, :3] = Rt
    out[:3, 3] = -Rt @ T[:3, 3]
    return out


def rotation_angle(R) -> float:
    """Rotation angle in radians via the trace formula (acos argument clamped)."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape == (4, 4):
        R = R[:3, :3]
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def rotation_to_quaternion(R) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) with qw >= 0 for a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape == (4, 4):
        R = R[:3, :3]
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (R[2, 1] - R[1, 2]) / s
        qy = (R[0, 2] - R[2, 0]) / s
        qz = (R[1, 0] - R[0, 1]) / s
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            qx = 0.25 * s
            qy = (R[0, 1] + R[1, 0]) / s
            qz = (R[0, 2] + R[2, 0]) / s
            qw = (R[2, 1] - R[1, 2]) / s
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            qx = (R[0, 1] + R[1, 0]) / s
            qy = 0.25 * s
            qz = (R[1, 2] + R[2, 1]) / s
            qw = (R[0, 2] - R[2, 0]) / s
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            qx = (R[0, 2] + R[2, 0]) / s
            qy = (R[1, 2] + R[2, 1]) / s
            qz = 0.25 * s
            qw = (R[1, 0] - R[0, 1]) / s
    q = np.array([qx, qy, qz, qw])
    q /= np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    return q


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrix from a quaternion (qx, qy, qz, qw)."""
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# projection and warping (vectorized over trailing point dimensions)


def backproject(K: Intrinsics, p, d) -> np.ndarray:
    """Lift pixel coordinates p (..., 2) with depths d (...) to 3D points (..., 3)."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)) or np.any(d <= 0):
        raise InvalidDepthError("depth values must be positive and finite")
    x = (p[..., 0] - K.cx) * d / K.fx
    y = (p[..., 1] - K.cy) * d / K.fy
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def project(K: Intrinsics, X) -> tuple[np.ndarray, np.ndarray]:
    """Project points (..., 3) to pixels (..., 2) with an in-front-of-camera mask."""
    X = np.asarray(X, dtype=np.float64)
    z = X[..., 2]
    in_front = z > BEHIND_CAMERA_EPS
    zs = np.where(in_front, z, 1.0)
    u = K.fx * X[..., 0] / zs + K.cx
    v = K.fy * X[..., 1] / zs + K.cy
    p = np.stack([u, v], axis=-1)
    p[~in_front] = np.nan
    return p, in_front


def transform_points(T, X) -> np.ndarray:
    """Apply a rigid transform to points (..., 3)."""
    T = np.asarray(T, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    return X @ T[:3, :3].T + T[:3, 3]


def warp_pixel(T, K: Intrinsics, p, d) -> tuple[np.ndarray, np.ndarray]:
    """Warp reference pixels into the current frame: project(T . backproject(p, d)).

    Returns warped pixel coordinates and a validity mask (False where the
    transformed point falls behind the camera). Out-of-image warps are
    handled later by the sampler.
    """
    return project(K, transform_points(T, backproject(K, p, d)))
