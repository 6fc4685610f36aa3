"""One-shot metric scale and keyframe-velocity recovery.

Over a window of keyframe pairs, IMU pre-integrations give metric
displacement/velocity constraints while VO supplies non-metric relative
translations; stacking both families of equations yields an
over-determined linear system in the per-keyframe velocities and one
global scale, solved in least squares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InitializationError, UnobservableScaleError
from .geometry import Pose, Quat, from_matrix, quat_mul, so3_exp, to_matrix
from .imu import (
    GRAVITY_W,
    BiasEstimate,
    ImuSample,
    Preintegrated,
    preintegrate,
)

# singular values below this fraction of the largest count as rank loss
RANK_RTOL = 1e-8


@dataclass
class CalibratedRig:
    """Fixed camera-IMU extrinsics and the gravity vector."""

    r_bc: Quat = field(default_factory=Quat)
    t_bc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    g_w: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())

    def __post_init__(self):
        g = float(np.linalg.norm(self.g_w))
        if not 9.0 <= g <= 10.5:
            raise ValueError(f"|g_w| = {g} outside [9.0, 10.5]")


@dataclass
class InitWindow:
    """Per-pair pre-integrations and VO translations plus keyframe orientations.

    ``pairs[k]`` covers keyframes (k, k+1); ``orientations`` has one
    entry per keyframe (len(pairs) + 1), from gyro-only integration.
    """

    pairs: list[tuple[Preintegrated, np.ndarray]]
    orientations: list[Quat]

    def __post_init__(self):
        if len(self.orientations) != len(self.pairs) + 1:
            raise ValueError("need one orientation per keyframe")
        if len(self.pairs) < 4:
            raise ValueError("scale recovery needs at least 4 keyframe pairs")
        for pre, _ in self.pairs:
            if pre.dt <= 0.0:
                raise ValueError("keyframe pairs must span positive time")


@dataclass
class ScaleSolution:
    s: float
    velocities: list[np.ndarray]
    residual_norm: float


def build_linear_system(w: InitWindow, rig: CalibratedRig) -> tuple[np.ndarray, np.ndarray]:
    """Stack position and velocity constraints of the window.

    Unknowns are [v_0, ..., v_n, s]; each pair contributes three
    position rows coupling (s, v_k) and three velocity rows coupling
    (v_k, v_{k+1}). The camera orientation comes from the body one via
    the fixed extrinsics.
    """
    n = len(w.pairs)
    cols = 3 * (n + 1) + 1
    h = np.zeros((6 * n, cols))
    b = np.zeros(6 * n)
    r_bc_t = to_matrix(rig.r_bc).T
    r_body = [to_matrix(q) for q in w.orientations]
    r_cam = [rb @ r_bc_t for rb in r_body]
    s_col = 3 * (n + 1)
    for k, (pre, p_vo) in enumerate(w.pairs):
        dt = pre.dt
        row = 6 * k
        # position constraint: R_ck p_vo s - dt v_k = R_bk dp - g dt^2 / 2 - (R_ck1 - R_ck) t_bc
        h[row : row + 3, s_col] = r_cam[k] @ p_vo
        h[row : row + 3, 3 * k : 3 * k + 3] = -dt * np.eye(3)
        b[row : row + 3] = (
            r_body[k] @ pre.dp
            - 0.5 * rig.g_w * dt * dt
            - (r_cam[k + 1] - r_cam[k]) @ rig.t_bc
        )
        # velocity constraint: v_{k+1} - v_k = R_bk dv - g dt
        h[row + 3 : row + 6, 3 * (k + 1) : 3 * (k + 1) + 3] = np.eye(3)
        h[row + 3 : row + 6, 3 * k : 3 * k + 3] = -np.eye(3)
        b[row + 3 : row + 6] = r_body[k] @ pre.dv - rig.g_w * dt
    return h, b


def solve_scale(h: np.ndarray, b: np.ndarray) -> ScaleSolution:
    """Least-squares solve; refuses rank-deficient or non-physical answers."""
    if h.shape[0] < h.shape[1]:
        raise ValueError("system must be over-determined (rows >= cols)")
    u, sv, vt = np.linalg.svd(h, full_matrices=False)
    rank = int(np.sum(sv > RANK_RTOL * sv[0]))
    if rank < h.shape[1]:
        raise UnobservableScaleError(
            f"scale unobservable: rank {rank} < {h.shape[1]} unknowns"
        )
    x = vt.T @ ((u.T @ b) / sv)
    s = float(x[-1])
    if s <= 0.0:
        raise InitializationError(f"recovered scale {s} is not positive")
    n_kf = (len(x) - 1) // 3
    velocities = [x[3 * k : 3 * k + 3].copy() for k in range(n_kf)]
    residual = float(np.linalg.norm(h @ x - b))
    return ScaleSolution(s, velocities, residual)


def apply_scale(vo_poses: list[Pose], s: float) -> list[Pose]:
    """Scale VO translations to metric; rotations untouched."""
    if s <= 0.0:
        raise ValueError(f"scale must be positive, got {s}")
    return [Pose(p.rotation, p.translation * s) for p in vo_poses]


def gravity_align_orientation(samples: list[ImuSample], g_w: np.ndarray | None = None) -> Quat:
    """Roll/pitch from the mean specific force of a near-static window.

    Returns the yaw-free rotation mapping the mean measured force onto
    the world up axis; yaw is unobservable from gravity and set to zero.
    """
    g = GRAVITY_W if g_w is None else np.asarray(g_w, dtype=float)
    mean_f = np.mean([s.accel for s in samples], axis=0)
    nf = np.linalg.norm(mean_f)
    if nf < 1e-9:
        raise ValueError("mean specific force is zero; cannot align gravity")
    up = g / np.linalg.norm(g)
    fb = mean_f / nf
    # shortest-arc rotation taking the body force direction onto world up
    c = float(np.clip(fb @ up, -1.0, 1.0))
    axis = np.cross(fb, up)
    na = np.linalg.norm(axis)
    if na < 1e-12:
        if c > 0.0:
            return Quat()
        # antiparallel: rotate half a turn about any horizontal axis
        return so3_exp(np.array([math.pi, 0.0, 0.0]))
    angle = math.acos(c)
    return so3_exp(axis / na * angle)


@dataclass
class InitResult:
    solution: ScaleSolution
    q_start: Quat  # gravity-aligned orientation at the log start
    q_anchor: Quat  # gyro-integrated orientation at the first keyframe
    t_anchor: float  # time of the first keyframe


def recover_scale_from_log(
    log,
    rig: CalibratedRig,
    bias: BiasEstimate | None = None,
    n_pairs: int = 10,
    keyframe_stride: int = 5,
    align_samples: int = 50,
    start_time: float = 1.0,
) -> InitResult:
    """Run initialization on the head of a sensor log.

    Gravity-aligns the start orientation on the opening (near-static)
    samples, then picks keyframes from the VO-bearing frames after
    ``start_time`` (the window needs motion; the platform's still
    prelude carries no scale information). Keyframe orientations come
    from gyro-only integration bridged from the aligned start;
    consecutive VO poses are differenced in the camera frame of the
    earlier keyframe using VO's own orientations.
    """
    bias = bias or BiasEstimate()
    vo_frames = [(t, vo) for t, vo in log.frames if vo is not None]
    candidates = [f for f in vo_frames if f[0] >= log.imu[0].t + start_time]
    keyframes = candidates[::keyframe_stride]
    if len(keyframes) < n_pairs + 1:
        raise InitializationError(
            f"log too short: {len(keyframes)} keyframes for {n_pairs} pairs"
        )
    keyframes = keyframes[: n_pairs + 1]

    imu_ts = np.array([s.t for s in log.imu])
    q0 = gravity_align_orientation(log.imu[:align_samples], rig.g_w)

    def imu_index(t):
        return int(np.argmin(np.abs(imu_ts - t)))

    # bridge the orientation from the aligned start to the first keyframe
    anchor_idx = imu_index(keyframes[0][0])
    if anchor_idx > 0:
        bridge = preintegrate(log.imu[: anchor_idx + 1], bias, log.noise)
        q_anchor = quat_mul(q0, bridge.dq)
    else:
        q_anchor = q0

    r_bc_t = to_matrix(rig.r_bc).T
    pairs = []
    orientations = [q_anchor]
    q = q_anchor
    for k in range(n_pairs):
        i0 = imu_index(keyframes[k][0])
        i1 = imu_index(keyframes[k + 1][0])
        pre = preintegrate(log.imu[i0 : i1 + 1], bias, log.noise)
        vo_k = keyframes[k][1]
        vo_k1 = keyframes[k + 1][1]
        r_cam_vo = to_matrix(vo_k.pose.rotation) @ r_bc_t
        p_vo = r_cam_vo.T @ (vo_k1.pose.translation - vo_k.pose.translation)
        pairs.append((pre, p_vo))
        q = quat_mul(q, pre.dq)
        orientations.append(q)

    window = InitWindow(pairs, orientations)
    h, b = build_linear_system(window, rig)
    return InitResult(solve_scale(h, b), q0, q_anchor, keyframes[0][0])
