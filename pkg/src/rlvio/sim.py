"""Synthetic trajectories, sensor synthesis, and replay environments.

Trajectories are sums of sinusoids per position axis plus sinusoidal
yaw/pitch profiles, so position, velocity, acceleration and body rates
all have closed forms. IMU samples carry the interval-average rates
(Simpson rule over each sample period), matching how integrating MEMS
front-ends report rates and keeping the discrete recursion faithful to
the continuous motion at 200 Hz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .fusion import FrameRecord, FusionEnv, FusionRewardConfig, VoObservation
from .geometry import Pose, Quat, quat_mul, so3_exp
from .imu import (
    GRAVITY_W,
    BiasEstimate,
    ImuSample,
    NavState,
    NoiseProfile,
    preintegrate,
)
from .select_env import SelectEnv, SelectRewardConfig

TWO_PI = 2.0 * math.pi


@dataclass
class TrajectorySpec:
    """Sum-of-sinusoids position (3 axes x H harmonics) plus yaw/pitch.

    Motion is held at zero for ``static_time`` seconds and then blended
    in smoothly over roughly ``ramp_tau`` seconds (set ramp_tau <= 0 to
    disable the envelope entirely). The static prelude is what gravity
    alignment keys on, as on real sequences.
    """

    amp: np.ndarray = field(
        default_factory=lambda: np.array(
            [[0.8, 0.3, 0.1], [0.7, 0.25, 0.1], [0.4, 0.15, 0.05]]
        )
    )
    freq: np.ndarray = field(
        default_factory=lambda: np.array(
            [[0.21, 0.47, 0.83], [0.17, 0.41, 0.71], [0.13, 0.37, 0.61]]
        )
    )
    phase: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    yaw_amp: float = 0.6
    yaw_freq: float = 0.19
    yaw_phase: float = 0.0
    pitch_amp: float = 0.25
    pitch_freq: float = 0.29
    pitch_phase: float = 0.0
    static_time: float = 0.5
    ramp_tau: float = 1.0


@dataclass
class VoModel:
    """Noise and confidence model of the simulated VO source.

    Position error has two parts: white jitter (pos_noise_std) and a
    slowly wandering first-order Gauss-Markov component (drift_std,
    drift_tau) emulating the low-frequency drift of real VO tracks.
    All noise magnitudes are metric (applied before dividing by the
    true scale). Degraded frames multiply the white noise and shrink
    confidence, emulating blurred or low-texture imagery.
    """

    scale: float = 1.0  # true scale s*: VO translations are truth / scale
    pos_noise_std: float = 0.003
    rot_noise_std: float = 0.002
    drift_std: float = 0.012  # stationary std of the correlated error
    drift_tau: float = 8.0  # correlation time (s)
    dropout: float = 0.0
    degraded_prob: float = 0.0
    degraded_noise_mult: float = 10.0
    degraded_conf_scale: float = 0.3
    conf_steepness: float = 40.0
    conf_offset: float = -1.0
    conf_noise: float = 0.05
    conf_floor: float = 0.05


@dataclass
class SimConfig:
    duration: float = 20.0
    imu_rate: float = 200.0
    frame_rate: float = 20.0
    traj: TrajectorySpec = field(default_factory=TrajectorySpec)
    noise: NoiseProfile = field(
        default_factory=lambda: NoiseProfile(1.7e-4, 2e-3, 1.9e-5, 3e-3)
    )
    bias: BiasEstimate = field(default_factory=BiasEstimate)
    vo: VoModel = field(default_factory=VoModel)
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())
    seed: int = 0

    def __post_init__(self):
        if self.imu_rate <= 0 or self.frame_rate <= 0:
            raise ConfigError("rates must be positive")
        if self.frame_rate > self.imu_rate:
            raise ConfigError("frame_rate must not exceed imu_rate")
        ratio = self.imu_rate / self.frame_rate
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("imu_rate must be an integer multiple of frame_rate")
        if self.vo.scale <= 0:
            raise ConfigError("VO scale must be positive")


@dataclass
class SensorLog:
    """One recorded run: IMU stream, frame times with optional VO, truth.

    ``frames`` keeps every camera timestamp; a None observation marks a
    dropped frame. ``noise`` and ``gravity`` travel with the log so
    replay environments can rebuild uncertainty proxies.
    """

    imu: list[ImuSample]
    frames: list[tuple[float, VoObservation | None]]
    gt: list[NavState]
    noise: NoiseProfile
    gravity: np.ndarray


def _envelope(spec: TrajectorySpec, ts: np.ndarray):
    """Ramp-in envelope value and its first two derivatives."""
    if spec.ramp_tau <= 0.0:
        one = np.ones_like(ts)
        zero = np.zeros_like(ts)
        return one, zero, zero
    u = np.maximum(ts - spec.static_time, 0.0) / spec.ramp_tau
    g = np.exp(-(u**2))
    e = 1.0 - g
    e1 = 2.0 * u * g / spec.ramp_tau
    e2 = 2.0 * (1.0 - 2.0 * u**2) * g / spec.ramp_tau**2
    return e, e1, e2


def _pos_vel_acc(spec: TrajectorySpec, ts: np.ndarray):
    """Vectorized analytic position/velocity/acceleration, shape (N, 3)."""
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    arg = TWO_PI * spec.freq[None, :, :] * ts[:, None, None] + spec.phase[None, :, :]
    w = TWO_PI * spec.freq
    s = np.sum(spec.amp[None] * np.sin(arg), axis=2)
    s1 = np.sum(spec.amp[None] * w[None] * np.cos(arg), axis=2)
    s2 = -np.sum(spec.amp[None] * w[None] ** 2 * np.sin(arg), axis=2)
    e, e1, e2 = (x[:, None] for x in _envelope(spec, ts))
    p = e * s
    v = e1 * s + e * s1
    a = e2 * s + 2.0 * e1 * s1 + e * s2
    return p, v, a


def _angles(spec: TrajectorySpec, ts: np.ndarray):
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    wy = TWO_PI * spec.yaw_freq
    wp = TWO_PI * spec.pitch_freq
    y = spec.yaw_amp * np.sin(wy * ts + spec.yaw_phase)
    y1 = spec.yaw_amp * wy * np.cos(wy * ts + spec.yaw_phase)
    pt = spec.pitch_amp * np.sin(wp * ts + spec.pitch_phase)
    pt1 = spec.pitch_amp * wp * np.cos(wp * ts + spec.pitch_phase)
    e, e1, _ = _envelope(spec, ts)
    yaw = e * y
    yaw_rate = e1 * y + e * y1
    pitch = e * pt
    pitch_rate = e1 * pt + e * pt1
    return yaw, yaw_rate, pitch, pitch_rate


def _quat_components(yaw: np.ndarray, pitch: np.ndarray):
    """q = Rz(yaw) * Ry(pitch) as arrays (w, x, y, z)."""
    a, b = np.cos(yaw / 2.0), np.sin(yaw / 2.0)
    c, d = np.cos(pitch / 2.0), np.sin(pitch / 2.0)
    return a * c, -b * d, a * d, b * c


def _body_rates(yaw_rate, pitch, pitch_rate):
    """Body angular rate of Rz(yaw)Ry(pitch): analytic Euler kinematics."""
    wx = -yaw_rate * np.sin(pitch)
    wy = pitch_rate
    wz = yaw_rate * np.cos(pitch)
    return np.stack([wx, wy, wz], axis=-1)


def _rotate_into_body(qw, qx, qy, qz, vec):
    """Apply R(q)^T to rows of vec, vectorized over samples."""
    # conjugate quaternion rotation: v' = v + 2*w*(v x u) + 2*(u x (v x u))
    u = np.stack([-qx, -qy, -qz], axis=-1)  # conj vector part
    t = 2.0 * np.cross(u, vec)
    return vec + qw[:, None] * t + np.cross(u, t)


def _equivalent_rotation_rate(qw, qx, qy, qz, dt):
    """Constant body rate whose exp reproduces each interval's rotation.

    Vectorized log(conj(q_i) * q_{i+1}) / dt over consecutive samples.
    """
    w0, x0, y0, z0 = qw[:-1], qx[:-1], qy[:-1], qz[:-1]
    w1, x1, y1, z1 = qw[1:], qx[1:], qy[1:], qz[1:]
    # Hamilton product conj(q0) * q1
    dw = w0 * w1 + x0 * x1 + y0 * y1 + z0 * z1
    dx = w0 * x1 - x0 * w1 - y0 * z1 + z0 * y1
    dy = w0 * y1 + x0 * z1 - y0 * w1 - z0 * x1
    dz = w0 * z1 - x0 * y1 + y0 * x1 - z0 * w1
    sign = np.where(dw < 0.0, -1.0, 1.0)
    dw, dx, dy, dz = sign * dw, sign * dx, sign * dy, sign * dz
    s = np.sqrt(dx * dx + dy * dy + dz * dz)
    k = np.where(s < 1e-12, 2.0 / np.maximum(dw, 1e-300), 2.0 * np.arctan2(s, dw) / np.maximum(s, 1e-300))
    return np.stack([dx * k, dy * k, dz * k], axis=-1) / dt


def gen_trajectory(spec: TrajectorySpec, t: float, duration: float | None = None):
    """Analytic state at time t: (p, v, a_world, q, omega_body)."""
    if duration is not None and not 0.0 <= t <= duration:
        raise ValueError(f"t={t} outside [0, {duration}]")
    ts = np.array([t])
    p, v, a = _pos_vel_acc(spec, ts)
    yaw, yaw_rate, pitch, pitch_rate = _angles(spec, ts)
    qw, qx, qy, qz = _quat_components(yaw, pitch)
    omega = _body_rates(yaw_rate, pitch, pitch_rate)
    q = Quat(float(qw[0]), float(qx[0]), float(qy[0]), float(qz[0]))
    return p[0], v[0], a[0], q, omega[0]


def vo_confidence_model(parallax_proxy: float, noise_draw: float, vo: VoModel | None = None) -> float:
    """Confidence in [0, 1]: floored sigmoid of parallax plus bounded noise."""
    vo = vo or VoModel()
    c = 1.0 / (1.0 + math.exp(-(vo.conf_steepness * parallax_proxy + vo.conf_offset)))
    c = max(c, vo.conf_floor) + noise_draw
    return float(np.clip(c, 0.0, 1.0))


def synthesize_log(cfg: SimConfig) -> SensorLog:
    """Generate IMU samples, VO observations and ground truth for one run.

    Timestamps span [0, duration] inclusive: duration * imu_rate + 1
    samples. A zero duration yields an empty log (header-only files
    when serialized).
    """
    if cfg.duration <= 0.0:
        return SensorLog([], [], [], replace(cfg.noise), cfg.gravity.copy())
    rng = np.random.default_rng(cfg.seed)
    dt = 1.0 / cfg.imu_rate
    n = int(round(cfg.duration * cfg.imu_rate)) + 1
    ts = np.arange(n) * dt

    p, v, a = _pos_vel_acc(cfg.traj, ts)
    yaw, yaw_rate, pitch, pitch_rate = _angles(cfg.traj, ts)
    qw, qx, qy, qz = _quat_components(yaw, pitch)

    # Equivalent rates over each sample interval, as a coning/sculling
    # compensating IMU front-end reports them: the constant body rate
    # reproducing the interval's rotation exactly, and the constant
    # specific force (in the interval-start frame) reproducing its
    # velocity change exactly. Both have closed forms here.
    omega_avg = np.empty((n, 3))
    omega_avg[:-1] = _equivalent_rotation_rate(qw, qx, qy, qz, dt)
    omega_avg[-1] = _body_rates(yaw_rate[-1:], pitch[-1:], pitch_rate[-1:])[0]
    force_avg = np.empty((n, 3))
    dv_world = (v[1:] - v[:-1]) / dt + cfg.gravity[None, :]
    force_avg[:-1] = _rotate_into_body(qw[:-1], qx[:-1], qy[:-1], qz[:-1], dv_world)
    force_avg[-1] = _rotate_into_body(
        qw[-1:], qx[-1:], qy[-1:], qz[-1:], a[-1:] + cfg.gravity[None, :]
    )[0]

    sqrt_rate = math.sqrt(cfg.imu_rate)
    gyro_noise = cfg.noise.gyro_noise_density * sqrt_rate * rng.standard_normal((n, 3))
    accel_noise = cfg.noise.accel_noise_density * sqrt_rate * rng.standard_normal((n, 3))
    omega_meas = omega_avg + cfg.bias.bg[None, :] + gyro_noise
    accel_meas = force_avg + cfg.bias.ba[None, :] + accel_noise

    imu = [ImuSample(float(ts[i]), omega_meas[i], accel_meas[i]) for i in range(n)]
    gt = [
        NavState(float(ts[i]), p[i], v[i], Quat(float(qw[i]), float(qx[i]), float(qy[i]), float(qz[i])))
        for i in range(n)
    ]

    stride = int(round(cfg.imu_rate / cfg.frame_rate))
    frame_idx = list(range(0, n, stride))
    frames: list[tuple[float, VoObservation | None]] = []
    prev_p = None
    # first-order Gauss-Markov drift of the VO track, stationary
    rho = math.exp(-stride * dt / max(cfg.vo.drift_tau, 1e-6))
    drift = cfg.vo.drift_std * rng.standard_normal(3)
    for fi in frame_idx:
        t = float(ts[fi])
        parallax = 0.0 if prev_p is None else float(np.linalg.norm(p[fi] - prev_p))
        prev_p = p[fi]
        degraded = rng.random() < cfg.vo.degraded_prob
        dropped = rng.random() < cfg.vo.dropout
        conf_draw = rng.uniform(-cfg.vo.conf_noise, cfg.vo.conf_noise)
        pos_draw = rng.standard_normal(3)
        rot_draw = rng.standard_normal(3)
        drift = rho * drift + cfg.vo.drift_std * math.sqrt(1.0 - rho * rho) * rng.standard_normal(3)
        if dropped:
            frames.append((t, None))
            continue
        mult = cfg.vo.degraded_noise_mult if degraded else 1.0
        p_obs = (p[fi] + drift + mult * cfg.vo.pos_noise_std * pos_draw) / cfg.vo.scale
        q_true = gt[fi].q
        q_obs = quat_mul(q_true, so3_exp(mult * cfg.vo.rot_noise_std * rot_draw))
        conf = vo_confidence_model(parallax, conf_draw, cfg.vo)
        if degraded:
            conf = float(np.clip(conf * cfg.vo.degraded_conf_scale, 0.0, 1.0))
        frames.append((t, VoObservation(t, Pose(q_obs, p_obs), conf)))

    return SensorLog(imu, frames, gt, replace(cfg.noise), cfg.gravity.copy())


def frame_indices(log: SensorLog) -> list[int]:
    """Indices of the frame timestamps inside the IMU sample array."""
    imu_ts = np.array([s.t for s in log.imu])
    idx = []
    for t, _ in log.frames:
        i = int(np.argmin(np.abs(imu_ts - t)))
        if abs(imu_ts[i] - t) > 1e-9:
            raise ValueError(f"frame time {t} does not coincide with an IMU sample")
        idx.append(i)
    return idx


def build_frame_records(
    log: SensorLog, bias: BiasEstimate | None = None, start_time: float | None = None
) -> list[FrameRecord]:
    """Pre-integrate every frame interval once; reused across episodes.

    Frames before ``start_time`` are dropped (used when a run begins at
    the initialization anchor rather than the first frame).
    """
    if not log.frames:
        raise ValueError("log has no frames")
    bias = bias or BiasEstimate()
    idx = frame_indices(log)
    keep = list(range(len(idx)))
    if start_time is not None:
        keep = [j for j in keep if log.frames[j][0] >= start_time - 1e-9]
        if len(keep) < 2:
            raise ValueError("no frames at or after start_time")
    records = []
    for prev, j in zip(keep[:-1], keep[1:]):
        seg = log.imu[idx[prev] : idx[j] + 1]
        pre = preintegrate(seg, bias, log.noise)
        t, vo = log.frames[j]
        records.append(FrameRecord(t, pre, vo, log.gt[idx[j]]))
    return records


def make_replay_env(
    log: SensorLog,
    mode: str,
    fusion_policy_or_stub=None,
    *,
    bias: BiasEstimate | None = None,
    select_reward: SelectRewardConfig | None = None,
    fusion_reward: FusionRewardConfig | None = None,
    vo_scale: float = 1.0,
    start_state: NavState | None = None,
    refiner=None,
    start_time: float | None = None,
):
    """Build a closed-loop replay environment over a recorded log.

    ``mode`` is "select" or "fusion". The fused state seeds the next
    propagation, so policy mistakes compound exactly as they would
    online. ``vo_scale`` converts the log's non-metric VO translations
    to meters (use the scale recovered at initialization).
    """
    records = build_frame_records(log, bias, start_time)
    if start_state is None:
        idx = frame_indices(log)
        first = idx[0]
        if start_time is not None:
            imu_ts = np.array([s.t for s in log.imu])
            for j, (t, _) in enumerate(log.frames):
                if t >= start_time - 1e-9:
                    first = idx[j]
                    break
        start_state = log.gt[first]
    if mode == "fusion":
        return FusionEnv(
            records,
            start_state,
            log.noise,
            fusion_reward,
            vo_scale=vo_scale,
            refiner=refiner,
            gravity=log.gravity,
        )
    if mode == "select":
        return SelectEnv(
            records,
            start_state,
            log.noise,
            select_reward,
            fusion_policy=fusion_policy_or_stub,
            fusion_reward_cfg=fusion_reward,
            vo_scale=vo_scale,
            refiner=refiner,
            gravity=log.gravity,
        )
    raise ValueError(f"mode must be 'select' or 'fusion', got {mode!r}")
