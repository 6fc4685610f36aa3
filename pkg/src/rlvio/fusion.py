"""Adaptive fusion of IMU predictions with sparse VO observations.

The fusion step blends the IMU-propagated state with the scaled VO
observation through per-axis convex weights (slerp for orientation). The
replay environment here drives the weight policy: it walks a recorded
stream of per-frame pre-integrations and VO observations, feeds the
fused state back into the next propagation, and scores each step with a
position-error-plus-uncertainty reward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose, Quat, quat_err, slerp
from .imu import (
    GRAVITY_W,
    NavState,
    NoiseProfile,
    Preintegrated,
    compose,
    sigma_position,
    strapdown_propagate,
)
from .mlp import (
    AdamState,
    MlpParams,
    adam_step,
    backward,
    forward,
    init_mlp,
)

FUSION_OBS_DIM = 24


@dataclass(slots=True)
class VoObservation:
    """One visual-odometry output: non-metric pose plus confidence in [0, 1]."""

    t: float
    pose: Pose
    confidence: float


@dataclass(slots=True)
class FusionWeights:
    """VO mixing weights, one per axis of p and v plus one for orientation."""

    w_p: np.ndarray
    w_v: np.ndarray
    w_q: float

    @classmethod
    def from_vector(cls, w) -> "FusionWeights":
        w = np.clip(np.asarray(w, dtype=float).reshape(7), 0.0, 1.0)
        return cls(w[0:3].copy(), w[3:6].copy(), float(w[6]))

    @classmethod
    def constant(cls, value: float) -> "FusionWeights":
        value = float(np.clip(value, 0.0, 1.0))
        return cls(np.full(3, value), np.full(3, value), value)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.w_p, self.w_v, [self.w_q]])


@dataclass(slots=True)
class FusionRewardConfig:
    """Eq-level constants of the fusion reward.

    trace_penalty weighs the uncertainty trace against squared position
    error; imu_var_weight scales the IMU variance inside the proxy.
    """

    trace_penalty: float = 0.01
    imu_var_weight: float = 1.0


@dataclass(slots=True)
class FusionObservation:
    """Fixed 24-dim policy input: IMU prediction, scaled VO, confidence cues."""

    pred_p: np.ndarray
    pred_v: np.ndarray
    pred_q: Quat
    vo_p: np.ndarray
    vo_v: np.ndarray
    vo_dq: np.ndarray  # VO orientation relative to prediction, axis-angle
    c_vo: float
    sigma_imu: np.ndarray
    dt_since_vo: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.pred_p,
                self.pred_v,
                self.pred_q.as_array(),
                self.vo_p,
                self.vo_v,
                self.vo_dq,
                [self.c_vo],
                self.sigma_imu,
                [self.dt_since_vo],
            ]
        )


def fuse(pred: NavState, vo: NavState, w: FusionWeights) -> NavState:
    """Per-axis convex blend of two states; slerp keeps the quat unit."""
    if abs(pred.t - vo.t) > 1e-6:
        raise ValueError(f"timestamp mismatch: {pred.t} vs {vo.t}")
    p = w.w_p * vo.p + (1.0 - w.w_p) * pred.p
    v = w.w_v * vo.v + (1.0 - w.w_v) * pred.v
    q = slerp(pred.q, vo.q, w.w_q)
    return NavState(pred.t, p, v, q)


def uncertainty_proxy(
    sigma_imu: np.ndarray, c_vo: float, cfg: FusionRewardConfig
) -> np.ndarray:
    """Diagonal of the fused-state uncertainty proxy."""
    return cfg.imu_var_weight * np.asarray(sigma_imu) ** 2 + (1.0 - c_vo) ** 2


def fusion_reward(
    p_fused: np.ndarray, p_gt: np.ndarray, sigma_diag: np.ndarray, trace_penalty: float
) -> float:
    """Negative squared position error minus the weighted uncertainty trace."""
    d = np.asarray(p_fused) - np.asarray(p_gt)
    return float(-(d @ d) - trace_penalty * np.sum(sigma_diag))


def estimate_vo_velocity(
    scaled_vo_prev: Pose,
    scaled_vo_cur: Pose,
    dt: float,
    pre: Preintegrated,
    refiner: MlpParams | None = None,
) -> np.ndarray:
    """Metric velocity from consecutive scaled VO poses.

    The baseline is the finite difference of the translations; a trained
    refiner net may add a correction computed from (baseline, IMU
    velocity delta, dt).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    baseline = (scaled_vo_cur.translation - scaled_vo_prev.translation) / dt
    if refiner is None:
        return baseline
    features = np.concatenate([baseline, pre.dv, [dt]])
    return baseline + forward(refiner, features)


def train_vo_refiner(
    baselines: np.ndarray,
    imu_dvs: np.ndarray,
    dts: np.ndarray,
    targets: np.ndarray,
    hidden: tuple[int, int] = (32, 32),
    epochs: int = 400,
    lr: float = 3e-3,
    seed: int = 0,
) -> tuple[MlpParams, list[float]]:
    """Fit the velocity refiner to minimize MSE against true velocities."""
    n = len(baselines)
    feats = np.column_stack([baselines, imu_dvs, dts.reshape(-1, 1)])
    resid_target = np.asarray(targets) - np.asarray(baselines)
    rng = np.random.default_rng(seed)
    params = init_mlp([7, *hidden, 3], ["tanh", "tanh", "identity"], rng)
    opt = AdamState.for_params(params)
    history = []
    for _ in range(epochs):
        pred = forward(params, feats)
        err = pred - resid_target
        grads, _ = backward(params, feats, 2.0 * err / n)
        adam_step(params, grads, opt, lr)
        history.append(float(np.mean(np.sum(err * err, axis=1))))
    return params, history


# --- replay environment --------------------------------------------------


@dataclass(slots=True)
class FrameRecord:
    """One frame interval of a replay stream.

    ``pre`` integrates the IMU from the previous frame to ``t``; ``vo``
    is the observation available at ``t`` (None when dropped); ``gt`` is
    the ground-truth state at ``t``.
    """

    t: float
    pre: Preintegrated
    vo: VoObservation | None
    gt: NavState


def one_step_optimal_weights(
    pred: NavState, vo: NavState, gt: NavState
) -> np.ndarray:
    """Per-axis gain targets minimizing the one-step error after fusing.

    Wiener-style plug-in gain d^2 / (d^2 + n^2), with d the prediction
    drift and n the VO error: 1 when drift dominates, 0 when the VO
    observation is noise-dominated. Bounded by construction, so these
    stay usable as regression targets for the supervised warm start.
    """
    w = np.zeros(7)
    for k in range(3):
        d2 = (pred.p[k] - gt.p[k]) ** 2
        n2 = (vo.p[k] - gt.p[k]) ** 2
        w[k] = d2 / (d2 + n2 + 1e-18)
    for k in range(3):
        d2 = (pred.v[k] - gt.v[k]) ** 2
        n2 = (vo.v[k] - gt.v[k]) ** 2
        w[3 + k] = d2 / (d2 + n2 + 1e-18)
    d2 = float(np.sum(quat_err(pred.q, gt.q) ** 2))
    n2 = float(np.sum(quat_err(vo.q, gt.q) ** 2))
    w[6] = d2 / (d2 + n2 + 1e-18)
    return w


class FusionEnv:
    """Gym-style replay environment for the fusion weight policy.

    Each step covers one frame interval: the IMU branch propagates the
    previous fused state, the action blends it with the frame's scaled
    VO observation (ignored when none is present), and the reward is the
    fusion reward at that frame. The fused state seeds the next
    propagation, so errors compound exactly as they do online.
    """

    def __init__(
        self,
        records: list[FrameRecord],
        start_state: NavState,
        noise: NoiseProfile,
        reward_cfg: FusionRewardConfig | None = None,
        vo_scale: float = 1.0,
        refiner: MlpParams | None = None,
        gravity: np.ndarray | None = None,
    ):
        if not records:
            raise ValueError("empty replay stream")
        self.records = records
        self.start_state = start_state.copy()
        self.noise = noise
        self.reward_cfg = reward_cfg or FusionRewardConfig()
        self.vo_scale = vo_scale
        self.refiner = refiner
        self.gravity = GRAVITY_W if gravity is None else np.asarray(gravity, dtype=float)
        self.obs_dim = FUSION_OBS_DIM
        self.action_dim = 7
        self.reset()

    def reset(self) -> np.ndarray:
        self._state = self.start_state.copy()
        self._idx = 0
        self._t_anchor = self._state.t
        self._accum = Preintegrated.identity()
        self._last_vo: tuple[float, Pose] | None = None
        self._advance()
        return self._obs.as_vector()

    # internal: propagate to the upcoming frame and build its observation
    def _advance(self) -> None:
        rec = self.records[self._idx]
        self._pending = strapdown_propagate(self._state, rec.pre, self.gravity)
        self._accum = compose(self._accum, rec.pre, self.noise)
        dt_since = rec.t - self._t_anchor
        sigma = np.full(3, sigma_position(self.noise, dt_since))
        if rec.vo is not None:
            self._vo_state = self._vo_navstate(rec, self._pending)
            c_vo = rec.vo.confidence
            vo_p = self._vo_state.p
            vo_v = self._vo_state.v
            vo_dq = quat_err(self._vo_state.q, self._pending.q)
        else:
            self._vo_state = None
            c_vo = 0.0
            vo_p = self._pending.p
            vo_v = self._pending.v
            vo_dq = np.zeros(3)
        self._obs = FusionObservation(
            self._pending.p,
            self._pending.v,
            self._pending.q,
            vo_p,
            vo_v,
            vo_dq,
            c_vo,
            sigma,
            dt_since,
        )

    def _vo_navstate(self, rec: FrameRecord, pending: NavState) -> NavState:
        scaled = Pose(rec.vo.pose.rotation, rec.vo.pose.translation * self.vo_scale)
        if self._last_vo is not None:
            t_prev, pose_prev = self._last_vo
            v = estimate_vo_velocity(
                pose_prev, scaled, rec.t - t_prev, self._accum, self.refiner
            )
        else:
            v = pending.v.copy()
        return NavState(rec.t, scaled.translation.copy(), v, scaled.rotation)

    def peek_optimal_weights(self) -> np.ndarray | None:
        """One-step optimal weights for the upcoming step (None without VO)."""
        rec = self.records[self._idx]
        if rec.vo is None:
            return None
        return one_step_optimal_weights(self._pending, self._vo_state, rec.gt)

    def peek_fusion_errors(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Drift and VO-error stacks (p, v, q-tangent) at the upcoming step.

        The fused one-step error is (1 - w) * drift + w * vo_error per
        component; exposing both lets the supervised warm start minimize
        it directly. None when the frame has no VO.
        """
        rec = self.records[self._idx]
        if rec.vo is None:
            return None
        drift = np.concatenate(
            [
                self._pending.p - rec.gt.p,
                self._pending.v - rec.gt.v,
                quat_err(self._pending.q, rec.gt.q),
            ]
        )
        vo_err = np.concatenate(
            [
                self._vo_state.p - rec.gt.p,
                self._vo_state.v - rec.gt.v,
                quat_err(self._vo_state.q, rec.gt.q),
            ]
        )
        return drift, vo_err

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        rec = self.records[self._idx]
        obs = self._obs
        info: dict = {"t": rec.t, "vo_present": rec.vo is not None}
        if rec.vo is not None:
            weights = (
                action
                if isinstance(action, FusionWeights)
                else FusionWeights.from_vector(action)
            )
            fused = fuse(self._pending, self._vo_state, weights)
            info["w_star"] = one_step_optimal_weights(self._pending, self._vo_state, rec.gt)
            info["action"] = weights.as_vector()
            scaled = Pose(
                rec.vo.pose.rotation, rec.vo.pose.translation * self.vo_scale
            )
            self._last_vo = (rec.t, scaled)
            self._t_anchor = rec.t
            self._accum = Preintegrated.identity()
        else:
            fused = self._pending
        sigma_diag = uncertainty_proxy(obs.sigma_imu, obs.c_vo, self.reward_cfg)
        reward = fusion_reward(
            fused.p, rec.gt.p, sigma_diag, self.reward_cfg.trace_penalty
        )
        info["fused"] = fused
        info["pos_err"] = float(np.linalg.norm(fused.p - rec.gt.p))
        self._state = fused
        self._idx += 1
        done = self._idx >= len(self.records)
        if not done:
            self._advance()
        return self._obs.as_vector(), reward, done, info


class FixedWeightPolicy:
    """Constant-weight stand-in for a learned fusion policy."""

    def __init__(self, value: float = 0.9):
        self.weights = FusionWeights.constant(value)

    def __call__(self, obs: FusionObservation) -> FusionWeights:
        return self.weights


def run_fusion_policy(env: FusionEnv, policy) -> dict:
    """Roll one episode with ``policy(obs_vector) -> action`` and collect stats."""
    obs = env.reset()
    done = False
    rewards, pos_errs, fused = [], [], []
    while not done:
        obs, reward, done, info = env.step(policy(obs))
        rewards.append(reward)
        pos_errs.append(info["pos_err"])
        fused.append(info["fused"])
    pos_errs = np.array(pos_errs)
    return {
        "rewards": np.array(rewards),
        "pos_errors": pos_errs,
        "rmse": float(np.sqrt(np.mean(pos_errs**2))),
        "trajectory": fused,
    }
