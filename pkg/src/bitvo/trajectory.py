"""Trajectory text formats: TUM (timestamped quaternions) and KITTI (3x4 rows).

A trajectory is a list of (timestamp, 4x4 camera-to-world pose) pairs.
Values are written with 9 significant digits so repeated runs produce
byte-identical files.
"""

from __future__ import annotations

import numpy as np

from . import geometry


def save_tum(path, traj) -> None:
    """`timestamp tx ty tz qx qy qz qw` per line, normalized quaternion."""
    with open(path, "w") as f:
        for t, pose in traj:
            pose = np.asarray(pose, dtype=np.float64)
            q = geometry.rotation_to_quaternion(pose)
            tx, ty, tz = pose[:3, 3]
            vals = " ".join(f"{v:.9g}" for v in (tx, ty, tz, *q))
            f.write(f"{t:.6f} {vals}\n")


def load_tum(path) -> list:
    traj = []
    with open(path) as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise ValueError(f"TUM trajectory line must have 8 values, got {len(vals)}")
            t, tx, ty, tz, qx, qy, qz, qw = vals
            pose = np.eye(4)
            pose[:3, :3] = geometry.quaternion_to_rotation([qx, qy, qz, qw])
            pose[:3, 3] = (tx, ty, tz)
            traj.append((t, pose))
    return traj


def save_kitti(path, traj) -> None:
    """12 row-major entries of the 3x4 pose matrix per line."""
    with open(path, "w") as f:
        for _, pose in traj:
            pose = np.asarray(pose, dtype=np.float64)
            f.write(" ".join(f"{v:.9g}" for v in pose[:3, :4].reshape(-1)) + "\n")


def load_kitti(path) -> list:
    traj = []
    with open(path) as f:
        for i, line in enumerate(f):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 12:
                raise ValueError(f"KITTI trajectory line must have 12 values, got {len(vals)}")
            pose = np.eye(4)
            pose[:3, :4] = np.array(vals).reshape(3, 4)
            traj.append((float(i), pose))
    return traj


def save(path, traj, fmt: str) -> None:
    if fmt == "tum":
        save_tum(path, traj)
    elif fmt == "kitti":
        save_kitti(path, traj)
    else:
        raise ValueError(f"unknown trajectory format {fmt!r}")


def load(path, fmt: str) -> list:
    if fmt == "tum":
        return load_tum(path)
    if fmt == "kitti":
        return load_kitti(path)
    raise ValueError(f"unknown trajectory format {fmt!r}")
