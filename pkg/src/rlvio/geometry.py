"""Quaternion and rigid-pose primitives shared by the whole pipeline.

Conventions, fixed once for every module:

* quaternions are Hamilton, scalar-first ``(w, x, y, z)``,
* an orientation quaternion maps body vectors into the world frame,
  ``p_w = R(q) @ p_b``,
* every exported operation returns a unit quaternion (|norm - 1| < 1e-9)
  with canonical sign ``w >= 0`` so equality is testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Below this rotation angle the exp/log maps switch to series expansions.
SMALL_ANGLE = 1e-8


@dataclass(slots=True)
class Quat:
    """Unit quaternion, Hamilton convention, scalar first."""

    w: float = 1.0
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])


@dataclass(slots=True)
class Pose:
    """Rigid transform: rotation plus translation in meters."""

    rotation: Quat = field(default_factory=Quat)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _canonical(w: float, x: float, y: float, z: float) -> Quat:
    """Normalize and flip sign so w >= 0 (q and -q are the same rotation)."""
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("cannot normalize zero quaternion")
    inv = 1.0 / n
    if w < 0.0:
        inv = -inv
    return Quat(w * inv, x * inv, y * inv, z * inv)


def normalize(q: Quat) -> Quat:
    return _canonical(q.w, q.x, q.y, q.z)


def quat_conj(q: Quat) -> Quat:
    return Quat(q.w, -q.x, -q.y, -q.z)


def quat_mul(a: Quat, b: Quat) -> Quat:
    """Hamilton product a ⊗ b, renormalized with canonical sign."""
    w = a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z
    x = a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y
    y = a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x
    z = a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w
    return _canonical(w, x, y, z)


def so3_exp(phi) -> Quat:
    """Axis-angle vector (rad) to unit quaternion.

    Uses a second-order series for |phi| < SMALL_ANGLE to avoid dividing
    by a vanishing angle.
    """
    px, py, pz = float(phi[0]), float(phi[1]), float(phi[2])
    theta2 = px * px + py * py + pz * pz
    theta = math.sqrt(theta2)
    if theta < SMALL_ANGLE:
        w = 1.0 - theta2 / 8.0
        s = 0.5 - theta2 / 48.0
    else:
        half = 0.5 * theta
        w = math.cos(half)
        s = math.sin(half) / theta
    return _canonical(w, px * s, py * s, pz * s)


def so3_log(q: Quat) -> np.ndarray:
    """Unit quaternion to axis-angle vector with |phi| <= pi.

    Raises ValueError when the input norm deviates from 1 by more than
    1e-6 (not a rotation).
    """
    n = q.norm()
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"not a unit quaternion (norm {n:.9f})")
    w, x, y, z = q.w / n, q.x / n, q.y / n, q.z / n
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    if s < SMALL_ANGLE:
        # first-order: phi ~ 2 * v / w, with w ~ 1 here
        k = 2.0 / w
    else:
        k = 2.0 * math.atan2(s, w) / s
    return np.array([x * k, y * k, z * k])


def quat_err(a: Quat, b: Quat) -> np.ndarray:
    """Rotation difference a relative to b as an axis-angle vector.

    Zero iff a and b represent the same rotation (sign-insensitive).
    """
    return so3_log(quat_mul(quat_conj(b), a))


def quat_angle(a: Quat, b: Quat | None = None) -> float:
    """Rotation angle of a, or of the relative rotation between a and b."""
    if b is None:
        return float(np.linalg.norm(so3_log(a)))
    return float(np.linalg.norm(quat_err(a, b)))


def slerp(q0: Quat, q1: Quat, w: float) -> Quat:
    """Spherical interpolation from q0 (w=0) to q1 (w=1), shortest path.

    The endpoints are returned exactly (no renormalization nudge), so
    w=0 and w=1 reproduce the inputs bit for bit.
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"interpolation weight {w} outside [0, 1]")
    if w == 0.0:
        return Quat(q0.w, q0.x, q0.y, q0.z)
    dot = q0.w * q1.w + q0.x * q1.x + q0.y * q1.y + q0.z * q1.z
    s1 = 1.0
    if dot < 0.0:
        dot, s1 = -dot, -1.0
    if w == 1.0:
        return Quat(s1 * q1.w, s1 * q1.x, s1 * q1.y, s1 * q1.z)
    dot = min(dot, 1.0)
    theta = math.acos(dot)
    if theta < SMALL_ANGLE:
        return _canonical(q0.w, q0.x, q0.y, q0.z)
    st = math.sin(theta)
    a = math.sin((1.0 - w) * theta) / st
    b = s1 * math.sin(w * theta) / st
    return _canonical(
        a * q0.w + b * q1.w,
        a * q0.x + b * q1.x,
        a * q0.y + b * q1.y,
        a * q0.z + b * q1.z,
    )


def rotate(q: Quat, v) -> np.ndarray:
    """Apply the rotation to a 3-vector: body frame into world frame."""
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    # t = 2 * (q_vec x v); v' = v + w*t + q_vec x t
    tx = 2.0 * (q.y * vz - q.z * vy)
    ty = 2.0 * (q.z * vx - q.x * vz)
    tz = 2.0 * (q.x * vy - q.y * vx)
    return np.array(
        [
            vx + q.w * tx + q.y * tz - q.z * ty,
            vy + q.w * ty + q.z * tx - q.x * tz,
            vz + q.w * tz + q.x * ty - q.y * tx,
        ]
    )


def to_matrix(q: Quat) -> np.ndarray:
    """3x3 rotation matrix of the quaternion."""
    w, x, y, z = q.w, q.x, q.y, q.z
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array(
        [
            [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
            [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
            [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
        ]
    )


def from_matrix(m: np.ndarray) -> Quat:
    """Rotation matrix to quaternion (Shepperd's branch selection)."""
    m = np.asarray(m, dtype=float)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        return _canonical(
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        )
    if m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        return _canonical(
            (m[2, 1] - m[1, 2]) / s,
            0.25 * s,
            (m[0, 1] + m[1, 0]) / s,
            (m[0, 2] + m[2, 0]) / s,
        )
    if m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        return _canonical(
            (m[0, 2] - m[2, 0]) / s,
            (m[0, 1] + m[1, 0]) / s,
            0.25 * s,
            (m[1, 2] + m[2, 1]) / s,
        )
    s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
    return _canonical(
        (m[1, 0] - m[0, 1]) / s,
        (m[0, 2] + m[2, 0]) / s,
        (m[1, 2] + m[2, 1]) / s,
        0.25 * s,
    )
