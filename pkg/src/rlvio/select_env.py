"""Skip/run scheduling environment for the VO gate.

The scheduler sees a purely inertial state: the pre-integrated drift
accumulated since the last VO run plus the elapsed time. Running VO
consumes the frame's observation through the (frozen) fusion policy and
resets the accumulator; skipping leaves dead reckoning in place. Dense
shaping follows the instantaneous position error; the terminal reward
trades trajectory error against the number of VO calls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import so3_log
from .imu import (
    GRAVITY_W,
    NavState,
    NoiseProfile,
    Preintegrated,
    compose,
    sigma_position,
    strapdown_propagate,
)
from .fusion import (
    FrameRecord,
    FusionObservation,
    FusionRewardConfig,
    FusionWeights,
    FixedWeightPolicy,
    estimate_vo_velocity,
    fuse,
    uncertainty_proxy,
)
from .geometry import Pose, quat_err

SELECT_OBS_DIM = 10
SKIP, RUN = 0, 1


@dataclass(slots=True)
class SelectState:
    """IMU-only scheduler state: accumulated drift deltas plus time gap."""

    dp: np.ndarray
    dq: np.ndarray  # axis-angle
    dv: np.ndarray
    dt_vo: float

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dp, self.dq, self.dv, [self.dt_vo]])


@dataclass(slots=True)
class SelectRewardConfig:
    """Terminal reward accuracy_weight / (ATE + eps) - cost_weight * N_f,
    clipped to ``clip``; per-step shaping is -shaping_scale * |pos error|."""

    accuracy_weight: float = 1.0
    cost_weight: float = 1e-3
    eps: float = 0.05
    shaping_scale: float = 1.0
    clip: tuple[float, float] = (-50.0, 50.0)

    def __post_init__(self):
        if self.eps <= 0.0:
            raise ValueError("eps must be positive")
        if self.clip[0] >= self.clip[1]:
            raise ValueError("clip range must be increasing")


def select_observation(
    accum: Preintegrated,
    dt_vo: float,
    q_anchor=None,
    gravity: np.ndarray | None = None,
) -> SelectState:
    """Build the scheduler state from the inertial accumulator only.

    With ``q_anchor`` (the IMU-side orientation at the accumulation
    start), the known gravity contribution is removed from dp/dv so a
    hovering platform reports zero drift; the inputs stay purely
    inertial either way.
    """
    dp = accum.dp.copy()
    dv = accum.dv.copy()
    if q_anchor is not None:
        from .geometry import quat_conj, rotate as _rotate

        g = GRAVITY_W if gravity is None else np.asarray(gravity, dtype=float)
        g_body = _rotate(quat_conj(q_anchor), g)
        dv -= g_body * accum.dt
        dp -= 0.5 * g_body * accum.dt**2
    return SelectState(dp, so3_log(accum.dq), dv, dt_vo)


def episode_reward(ate: float, n_f: int, cfg: SelectRewardConfig) -> float:
    """Terminal accuracy-vs-compute trade-off, clipped to the configured range."""
    if ate < 0.0:
        raise ValueError("ate must be nonnegative")
    r = cfg.accuracy_weight / (ate + cfg.eps) - cfg.cost_weight * n_f
    return float(np.clip(r, cfg.clip[0], cfg.clip[1]))


def reward_tradeoff_map(
    a_values,
    b_values,
    policies: list[tuple[str, float, int]],
    baseline: tuple[str, float, int],
    eps: float = 0.05,
) -> list[dict]:
    """Reward difference of each policy against the baseline over an
    (accuracy_weight, cost_weight) grid.

    ``policies`` and ``baseline`` are (name, ate, n_f) rows, typically
    measured from fixed-skip runs. The output rows carry the difference
    ``delta_r``; its sign boundary in the grid is where the preference
    between the policy and the baseline flips.
    """
    a_values = list(a_values)
    b_values = list(b_values)
    if not a_values or not b_values or not policies:
        raise ValueError("empty grid or policy table")
    _, ate0, nf0 = baseline
    rows = []
    for name, ate, nf in policies:
        d_inv = 1.0 / (ate + eps) - 1.0 / (ate0 + eps)
        d_nf = nf - nf0
        for a in a_values:
            for b in b_values:
                rows.append(
                    {
                        "accuracy_weight": float(a),
                        "cost_weight": float(b),
                        "policy": name,
                        "delta_r": float(a * d_inv - b * d_nf),
                    }
                )
    return rows


class SelectEnv:
    """Gym-style replay environment for the skip/run scheduler.

    Actions: 0 skips the frame (pure IMU propagation), 1 runs VO and
    fuses the observation with the frozen fusion policy. The observation
    never contains visual quantities; VO data only enters through the
    fusion step after a Run action.
    """

    def __init__(
        self,
        records: list[FrameRecord],
        start_state: NavState,
        noise: NoiseProfile,
        reward_cfg: SelectRewardConfig | None = None,
        fusion_policy=None,
        fusion_reward_cfg: FusionRewardConfig | None = None,
        vo_scale: float = 1.0,
        refiner=None,
        gravity: np.ndarray | None = None,
    ):
        if not records:
            raise ValueError("empty replay stream")
        self.records = records
        self.start_state = start_state.copy()
        self.noise = noise
        self.reward_cfg = reward_cfg or SelectRewardConfig()
        self.fusion_policy = fusion_policy or FixedWeightPolicy(0.9)
        self.fusion_reward_cfg = fusion_reward_cfg or FusionRewardConfig()
        self.vo_scale = vo_scale
        self.refiner = refiner
        self.gravity = GRAVITY_W if gravity is None else np.asarray(gravity, dtype=float)
        self.obs_dim = SELECT_OBS_DIM
        self.reset()

    def reset(self) -> np.ndarray:
        self._state = self.start_state.copy()
        self._idx = 0
        self._accum = Preintegrated.identity()
        self._dt_vo = 0.0
        self._q_anchor = self._state.q
        self._last_vo: tuple[float, Pose] | None = None
        self._n_f = 0
        self._sq_err_sum = 0.0
        self._advance()
        return self._observation()

    def _observation(self) -> np.ndarray:
        return select_observation(
            self._accum, self._dt_vo, self._q_anchor, self.gravity
        ).as_vector()

    def _advance(self) -> None:
        rec = self.records[self._idx]
        self._pending = strapdown_propagate(self._state, rec.pre, self.gravity)
        self._accum = compose(self._accum, rec.pre, self.noise)
        self._dt_vo += rec.pre.dt

    def _fusion_observation(self, rec: FrameRecord, vo_state: NavState) -> FusionObservation:
        sigma = np.full(3, sigma_position(self.noise, self._dt_vo))
        return FusionObservation(
            self._pending.p,
            self._pending.v,
            self._pending.q,
            vo_state.p,
            vo_state.v,
            quat_err(vo_state.q, self._pending.q),
            rec.vo.confidence,
            sigma,
            self._dt_vo,
        )

    def step(self, action) -> tuple[np.ndarray, float, bool, dict]:
        action = int(action)
        if action not in (SKIP, RUN):
            raise ValueError(f"action must be 0 or 1, got {action}")
        rec = self.records[self._idx]
        info: dict = {"t": rec.t, "action": action, "vo_present": rec.vo is not None}
        fused = self._pending
        if action == RUN:
            self._n_f += 1
            if rec.vo is not None:
                scaled = Pose(
                    rec.vo.pose.rotation, rec.vo.pose.translation * self.vo_scale
                )
                if self._last_vo is not None:
                    t_prev, pose_prev = self._last_vo
                    v_vo = estimate_vo_velocity(
                        pose_prev, scaled, rec.t - t_prev, self._accum, self.refiner
                    )
                else:
                    v_vo = self._pending.v.copy()
                vo_state = NavState(rec.t, scaled.translation.copy(), v_vo, scaled.rotation)
                obs_f = self._fusion_observation(rec, vo_state)
                weights = self.fusion_policy(obs_f.as_vector())
                if not isinstance(weights, FusionWeights):
                    weights = FusionWeights.from_vector(weights)
                fused = fuse(self._pending, vo_state, weights)
                self._last_vo = (rec.t, scaled)
                self._accum = Preintegrated.identity()
                self._dt_vo = 0.0
                self._q_anchor = fused.q
        pos_err = float(np.linalg.norm(fused.p - rec.gt.p))
        self._sq_err_sum += pos_err * pos_err
        # the VO-call cost of the episode reward is charged at the action
        # itself (same episode total, far better credit assignment)
        reward = -self.reward_cfg.shaping_scale * pos_err
        if action == RUN:
            reward -= self.reward_cfg.cost_weight
        info["pos_err"] = pos_err
        info["fused"] = fused
        self._state = fused
        self._idx += 1
        done = self._idx >= len(self.records)
        if done:
            ate = float(np.sqrt(self._sq_err_sum / len(self.records)))
            lo, hi = self.reward_cfg.clip
            reward += float(np.clip(self.reward_cfg.accuracy_weight / (ate + self.reward_cfg.eps), lo, hi))
            info["ate"] = ate
            info["n_f"] = self._n_f
            # Eq-style episode reward (accuracy minus total VO cost), for reporting
            info["terminal_reward"] = episode_reward(ate, self._n_f, self.reward_cfg)
        else:
            self._advance()
        return self._observation(), reward, done, info


class FixedIntervalPolicy:
    """Run VO on every k-th frame (k=1 runs always)."""

    def __init__(self, interval: int):
        if interval < 1:
            raise ValueError("interval must be >= 1")
        self.interval = interval
        self._count = 0

    def reset(self):
        self._count = 0

    def __call__(self, obs) -> int:
        run = self._count % self.interval == 0
        self._count += 1
        return RUN if run else SKIP


class HeuristicGatePolicy:
    """Run VO when accumulated drift or elapsed time crosses a threshold."""

    def __init__(self, dp_thresh: float = 0.05, dq_thresh: float = 0.05, dt_cap: float = 1.0):
        self.dp_thresh = dp_thresh
        self.dq_thresh = dq_thresh
        self.dt_cap = dt_cap

    def reset(self):
        pass

    def __call__(self, obs) -> int:
        obs = np.asarray(obs)
        dp = np.linalg.norm(obs[0:3])
        dq = np.linalg.norm(obs[3:6])
        dt_vo = obs[9]
        run = dp > self.dp_thresh or dq > self.dq_thresh or dt_vo > self.dt_cap
        return RUN if run else SKIP


def run_select_policy(env: SelectEnv, policy) -> dict:
    """Roll one episode with ``policy(obs_vector) -> 0|1`` and collect stats."""
    if hasattr(policy, "reset"):
        policy.reset()
    obs = env.reset()
    done = False
    actions, rewards, pos_errs, fused = [], [], [], []
    info: dict = {}
    while not done:
        a = policy(obs)
        obs, reward, done, info = env.step(a)
        actions.append(int(a))
        rewards.append(reward)
        pos_errs.append(info["pos_err"])
        fused.append(info["fused"])
    pos_errs = np.array(pos_errs)
    return {
        "actions": actions,
        "rewards": np.array(rewards),
        "pos_errors": pos_errs,
        "trajectory": fused,
        "ate": info["ate"],
        "n_f": info["n_f"],
        "terminal_reward": info["terminal_reward"],
        "skip_ratio": 1.0 - info["n_f"] / len(actions) if actions else 0.0,
    }
