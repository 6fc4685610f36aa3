"""IMU modeling: sample correction, discrete pre-integration, strapdown
propagation, and the two-stage learned bias estimators.

Frame and sign conventions (fixed package-wide):

* world frame is z-up; ``GRAVITY_W = (0, 0, 9.81)`` is the vector that
  propagation subtracts, i.e. free fall accelerates along -z,
* the accelerometer measures specific force
  ``a_m = R(q)^T (a_world + g_w) + bias + noise`` so a resting, level
  sensor reads +9.81 on its z axis,
* pre-integrated deltas (dq, dv, dp) live in the body frame of the
  window start and are applied to a world state by rotating with the
  state's orientation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Quat, quat_err, quat_mul, rotate, so3_exp, to_matrix
from .mlp import AdamState, MlpGrads, MlpParams, adam_step, backward, forward, init_mlp

GRAVITY_W = np.array([0.0, 0.0, 9.81])


@dataclass(slots=True)
class ImuSample:
    """One IMU reading: time (s), angular rate (rad/s), specific force (m/s^2)."""

    t: float
    omega: np.ndarray
    accel: np.ndarray


@dataclass(slots=True)
class BiasEstimate:
    bg: np.ndarray = field(default_factory=lambda: np.zeros(3))
    ba: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass(slots=True)
class NoiseProfile:
    """Continuous-time noise densities and bias stabilities, all >= 0.

    Defaults are zero (a perfect IMU); simulation configs typically set
    consumer/EuRoC-grade values.
    """

    gyro_noise_density: float = 0.0  # rad/s/sqrt(Hz)
    accel_noise_density: float = 0.0  # m/s^2/sqrt(Hz)
    gyro_bias_stability: float = 0.0  # rad/s
    accel_bias_stability: float = 0.0  # m/s^2

    def as_array(self) -> np.ndarray:
        return np.array(
            [
                self.gyro_noise_density,
                self.accel_noise_density,
                self.gyro_bias_stability,
                self.accel_bias_stability,
            ]
        )


@dataclass(slots=True)
class Preintegrated:
    """Relative motion over one window, in the frame of the window start.

    ``sigma_imu`` is a per-axis standard-deviation proxy for the position
    uncertainty accumulated over the window; it is recomputed in closed
    form from the window duration, so composing windows stays consistent.
    """

    dq: Quat
    dv: np.ndarray
    dp: np.ndarray
    dt: float
    sigma_imu: np.ndarray

    @classmethod
    def identity(cls) -> "Preintegrated":
        return cls(Quat(), np.zeros(3), np.zeros(3), 0.0, np.zeros(3))


@dataclass(slots=True)
class NavState:
    """Navigation state: time, position, velocity, body-to-world orientation."""

    t: float
    p: np.ndarray
    v: np.ndarray
    q: Quat

    def copy(self) -> "NavState":
        return NavState(self.t, self.p.copy(), self.v.copy(), Quat(self.q.w, self.q.x, self.q.y, self.q.z))


def correct(s: ImuSample, b: BiasEstimate) -> ImuSample:
    """Subtract the bias estimate from a raw sample."""
    return ImuSample(s.t, s.omega - b.bg, s.accel - b.ba)


def sigma_position(noise: NoiseProfile, dt: float) -> float:
    """Closed-form position-noise std after integrating for dt seconds.

    White accelerometer noise integrated twice gives std
    sigma_a * dt^(3/2) / sqrt(3); an unmodeled constant bias of the
    stability magnitude adds 0.5 * sigma_ba * dt^2. Monotone in dt.
    """
    return noise.accel_noise_density * dt**1.5 / math.sqrt(3.0) + 0.5 * noise.accel_bias_stability * dt**2


def preintegrate(
    samples: list[ImuSample], b: BiasEstimate, noise: NoiseProfile
) -> Preintegrated:
    """Discrete pre-integration over a window of IMU samples.

    Zero-order hold: sample i's corrected rates are applied over
    [t_i, t_{i+1}]; the last sample only closes the final interval.
    """
    if len(samples) < 2:
        raise ValueError("pre-integration needs at least 2 samples")
    bgx, bgy, bgz = float(b.bg[0]), float(b.bg[1]), float(b.bg[2])
    bax, bay, baz = float(b.ba[0]), float(b.ba[1]), float(b.ba[2])

    q = Quat()
    vx = vy = vz = 0.0
    px = py = pz = 0.0
    t_prev = samples[0].t
    for i in range(len(samples) - 1):
        s = samples[i]
        dt = samples[i + 1].t - t_prev
        if dt <= 0.0:
            raise ValueError(f"non-monotone timestamps at sample {i + 1}")
        t_prev = samples[i + 1].t
        ax = float(s.accel[0]) - bax
        ay = float(s.accel[1]) - bay
        az = float(s.accel[2]) - baz
        # rotate body accel into the window-start frame with current dq
        tx = 2.0 * (q.y * az - q.z * ay)
        ty = 2.0 * (q.z * ax - q.x * az)
        tz = 2.0 * (q.x * ay - q.y * ax)
        rax = ax + q.w * tx + q.y * tz - q.z * ty
        ray = ay + q.w * ty + q.z * tx - q.x * tz
        raz = az + q.w * tz + q.x * ty - q.y * tx
        half_dt2 = 0.5 * dt * dt
        px += vx * dt + rax * half_dt2
        py += vy * dt + ray * half_dt2
        pz += vz * dt + raz * half_dt2
        vx += rax * dt
        vy += ray * dt
        vz += raz * dt
        q = quat_mul(
            q,
            so3_exp(
                (
                    (float(s.omega[0]) - bgx) * dt,
                    (float(s.omega[1]) - bgy) * dt,
                    (float(s.omega[2]) - bgz) * dt,
                )
            ),
        )
    total_dt = samples[-1].t - samples[0].t
    sig = sigma_position(noise, total_dt)
    return Preintegrated(
        q, np.array([vx, vy, vz]), np.array([px, py, pz]), total_dt, np.full(3, sig)
    )


def compose(a: Preintegrated, b: Preintegrated, noise: NoiseProfile) -> Preintegrated:
    """Chain two consecutive windows into one.

    Follows the same recursion as preintegrate, so splitting a window at
    any interior sample and composing reproduces the full-window result.
    """
    dq = quat_mul(a.dq, b.dq)
    dv = a.dv + rotate(a.dq, b.dv)
    dp = a.dp + a.dv * b.dt + rotate(a.dq, b.dp)
    dt = a.dt + b.dt
    return Preintegrated(dq, dv, dp, dt, np.full(3, sigma_position(noise, dt)))


def strapdown_propagate(x: NavState, pre: Preintegrated, g_w: np.ndarray) -> NavState:
    """Advance a world-frame state by one pre-integrated window."""
    dt = pre.dt
    dv_w = rotate(x.q, pre.dv)
    dp_w = rotate(x.q, pre.dp)
    return NavState(
        x.t + dt,
        x.p + x.v * dt - 0.5 * g_w * dt * dt + dp_w,
        x.v - g_w * dt + dv_w,
        quat_mul(x.q, pre.dq),
    )


# --- learned bias estimation -------------------------------------------
#
# Both estimator nets consume the same 28 summary features of a window:
# per-axis mean/std/min/max of the gyro rates (12), the same for the
# accelerometer (12, scaled down since gravity dominates), and the four
# noise-profile scalars (scaled up into a usable range).

FEATURE_DIM = 28
_ACCEL_FEATURE_SCALE = 0.1
_NOISE_FEATURE_SCALE = 100.0
MIN_WINDOW_SAMPLES = 8


def window_features(samples: list[ImuSample], noise: NoiseProfile) -> np.ndarray:
    if len(samples) < MIN_WINDOW_SAMPLES:
        raise ValueError(f"window too short for feature extraction ({len(samples)} samples)")
    gyro = np.array([s.omega for s in samples])
    acc = np.array([s.accel for s in samples])

    def stats(m: np.ndarray) -> np.ndarray:
        return np.concatenate([m.mean(axis=0), m.std(axis=0), m.min(axis=0), m.max(axis=0)])

    return np.concatenate(
        [stats(gyro), stats(acc) * _ACCEL_FEATURE_SCALE, noise.as_array() * _NOISE_FEATURE_SCALE]
    )


@dataclass
class BiasTrainConfig:
    hidden: tuple[int, int] = (64, 64)
    epochs: int = 300
    lr: float = 3e-3
    seed: int = 0
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY_W.copy())
    fd_step: float = 1e-6


def _predict_bias(params: MlpParams, features: np.ndarray) -> np.ndarray:
    return forward(params, features)


def integrate_gyro(samples: list[ImuSample], bg: np.ndarray, q0: Quat) -> Quat:
    """Integrate bias-corrected rates from q0 across the window."""
    q = q0
    bx, by, bz = float(bg[0]), float(bg[1]), float(bg[2])
    for i in range(len(samples) - 1):
        dt = samples[i + 1].t - samples[i].t
        w = samples[i].omega
        q = quat_mul(
            q,
            so3_exp(((float(w[0]) - bx) * dt, (float(w[1]) - by) * dt, (float(w[2]) - bz) * dt)),
        )
    return q


def _new_net(cfg: BiasTrainConfig) -> tuple[MlpParams, AdamState]:
    rng = np.random.default_rng(cfg.seed)
    params = init_mlp([FEATURE_DIM, *cfg.hidden, 3], ["tanh", "tanh", "identity"], rng)
    return params, AdamState.for_params(params)


def train_gyro_bias(
    windows: list[tuple[list[ImuSample], Quat, Quat]],
    noise: NoiseProfile,
    cfg: BiasTrainConfig | None = None,
) -> tuple[MlpParams, list[float]]:
    """Stage 1: fit the gyro-bias net on endpoint-orientation error.

    Each window is (samples, start orientation, end orientation). The
    loss per window is the squared axis-angle error between the
    integrated and the true end orientation; its gradient w.r.t. the
    3-vector bias output is taken by central differences, then
    backpropagated through the net analytically.

    Returns the trained params and the per-epoch mean loss history.
    """
    if not windows:
        raise ValueError("empty training set")
    cfg = cfg or BiasTrainConfig()
    params, opt = _new_net(cfg)
    feats = np.array([window_features(s, noise) for s, _, _ in windows])
    n = len(windows)
    h = cfg.fd_step

    def window_loss(idx: int, bg: np.ndarray) -> float:
        samples, q0, q_end = windows[idx]
        e = quat_err(integrate_gyro(samples, bg, q0), q_end)
        return float(e @ e)

    history = []
    for _ in range(cfg.epochs):
        preds = forward(params, feats)
        upstream = np.zeros((n, 3))
        total = 0.0
        for i in range(n):
            total += window_loss(i, preds[i])
            for k in range(3):
                step = np.zeros(3)
                step[k] = h
                upstream[i, k] = (window_loss(i, preds[i] + step) - window_loss(i, preds[i] - step)) / (2 * h)
        grads, _ = backward(params, feats, upstream / n)
        adam_step(params, grads, opt, cfg.lr)
        history.append(total / n)
    return params, history


def gyro_loss(
    params: MlpParams,
    windows: list[tuple[list[ImuSample], Quat, Quat]],
    noise: NoiseProfile,
) -> float:
    """Mean endpoint-orientation loss of a gyro net over windows."""
    total = 0.0
    for samples, q0, q_end in windows:
        bg = _predict_bias(params, window_features(samples, noise))
        e = quat_err(integrate_gyro(samples, bg, q0), q_end)
        total += float(e @ e)
    return total / len(windows)


def train_accel_bias(
    windows: list[tuple[list[ImuSample], Quat, np.ndarray, np.ndarray]],
    gyro_params: MlpParams,
    noise: NoiseProfile,
    cfg: BiasTrainConfig | None = None,
) -> tuple[MlpParams, list[float]]:
    """Stage 2: fit the accel-bias net on endpoint-velocity error.

    Each window is (samples, start orientation, start velocity, end
    velocity). Rotations come from the frozen stage-1 net, so the
    predicted end velocity is linear in the accel bias and the gradient
    is exact:

        v_end(ba) = v0 + sum_i R_i (a_i - ba) dt_i - g * T
    """
    if not windows:
        raise ValueError("empty training set")
    cfg = cfg or BiasTrainConfig()
    params, opt = _new_net(cfg)
    feats = np.array([window_features(s, noise) for s, _, _, _ in windows])
    n = len(windows)

    # Precompute the affine map v_end = const - M @ ba per window.
    consts, mats, targets = [], [], []
    for samples, q0, v0, v_end in windows:
        bg = _predict_bias(gyro_params, window_features(samples, noise))
        q = q0
        c = np.asarray(v0, dtype=float).copy()
        m = np.zeros((3, 3))
        for i in range(len(samples) - 1):
            dt = samples[i + 1].t - samples[i].t
            r = to_matrix(q)
            c += r @ samples[i].accel * dt
            m += r * dt
            w = samples[i].omega - bg
            q = quat_mul(q, so3_exp(w * dt))
        c -= cfg.gravity * (samples[-1].t - samples[0].t)
        consts.append(c)
        mats.append(m)
        targets.append(np.asarray(v_end, dtype=float))

    history = []
    for _ in range(cfg.epochs):
        preds = forward(params, feats)
        upstream = np.zeros((n, 3))
        total = 0.0
        for i in range(n):
            resid = consts[i] - mats[i] @ preds[i] - targets[i]
            total += float(resid @ resid)
            upstream[i] = -2.0 * mats[i].T @ resid
        grads, _ = backward(params, feats, upstream / n)
        adam_step(params, grads, opt, cfg.lr)
        history.append(total / n)
    return params, history


def accel_loss(
    params: MlpParams,
    windows: list[tuple[list[ImuSample], Quat, np.ndarray, np.ndarray]],
    gyro_params: MlpParams,
    noise: NoiseProfile,
    gravity: np.ndarray | None = None,
) -> float:
    """Mean endpoint-velocity loss of an accel net over windows."""
    g = GRAVITY_W if gravity is None else gravity
    total = 0.0
    for samples, q0, v0, v_end in windows:
        feats = window_features(samples, noise)
        bg = _predict_bias(gyro_params, feats)
        ba = _predict_bias(params, feats)
        q = q0
        v = np.asarray(v0, dtype=float).copy()
        for i in range(len(samples) - 1):
            dt = samples[i + 1].t - samples[i].t
            v += rotate(q, samples[i].accel - ba) * dt
            q = quat_mul(q, so3_exp((samples[i].omega - bg) * dt))
        v -= g * (samples[-1].t - samples[0].t)
        resid = v - v_end
        total += float(resid @ resid)
    return total / len(windows)


def estimate_bias(
    gyro_params: MlpParams | None,
    accel_params: MlpParams | None,
    window: list[ImuSample],
    noise: NoiseProfile,
) -> BiasEstimate:
    """One fixed bias estimate for a window (either net may be absent)."""
    feats = window_features(window, noise)
    bg = _predict_bias(gyro_params, feats) if gyro_params is not None else np.zeros(3)
    ba = _predict_bias(accel_params, feats) if accel_params is not None else np.zeros(3)
    return BiasEstimate(bg, ba)
