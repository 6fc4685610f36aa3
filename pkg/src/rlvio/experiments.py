"""Training pipelines and desk-scale ablation studies.

These functions generate their own synthetic data from the run config,
train the learned components at reduced budgets, and return plain row
dicts ready for CSV and figure rendering.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import replace

import numpy as np

from .evaluation import ate_rmse
from .fusion import (
    FixedWeightPolicy,
    FrameRecord,
    FusionEnv,
    FusionWeights,
    run_fusion_policy,
)
from .geometry import Quat, quat_mul, quat_err, rotate, so3_exp, so3_log, to_matrix
from .imu import (
    BiasEstimate,
    NavState,
    estimate_bias,
    preintegrate,
    strapdown_propagate,
    train_accel_bias,
    train_gyro_bias,
)
from .ppo import (
    PolicyHead,
    deterministic_policy,
    make_fusion_head,
    make_select_head,
    train,
    warmstart_fusion,
)
from .select_env import (
    FixedIntervalPolicy,
    HeuristicGatePolicy,
    SelectEnv,
    reward_tradeoff_map,
    run_select_policy,
)
from .sim import SensorLog, SimConfig, build_frame_records, make_replay_env, synthesize_log


class CyclingEnv:
    """Round-robin over several replay environments, one per reset."""

    def __init__(self, envs):
        if not envs:
            raise ValueError("need at least one environment")
        self.envs = envs
        self._i = -1
        self._cur = envs[0]

    def reset(self):
        self._i = (self._i + 1) % len(self.envs)
        self._cur = self.envs[self._i]
        return self._cur.reset()

    def step(self, action):
        return self._cur.step(action)

    def peek_optimal_weights(self):
        return self._cur.peek_optimal_weights()

    def peek_fusion_errors(self):
        return self._cur.peek_fusion_errors()


# --- synthetic data helpers ----------------------------------------------


def _randomized_traj(base, rng, enveloped: bool = True):
    spec = replace(
        base,
        phase=rng.uniform(0.0, 2.0 * math.pi, size=(3, 3)),
        yaw_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
        pitch_phase=float(rng.uniform(0.0, 2.0 * math.pi)),
    )
    if not enveloped:
        spec = replace(spec, static_time=0.0, ramp_tau=0.0)
    return spec


def make_bias_training_windows(sim_cfg: SimConfig, data_cfg, seed: int = 0):
    """Short logs with randomized motion and injected biases.

    Returns (gyro windows, accel windows) in the shapes the two training
    stages expect.
    """
    rng = np.random.default_rng(seed)
    gyro_windows, accel_windows = [], []
    for i in range(data_cfg.n_bias_windows):
        bias = BiasEstimate(
            rng.uniform(-data_cfg.bias_gyro_range, data_cfg.bias_gyro_range, 3),
            rng.uniform(-data_cfg.bias_accel_range, data_cfg.bias_accel_range, 3),
        )
        cfg = replace(
            sim_cfg,
            duration=data_cfg.bias_window_s,
            traj=_randomized_traj(sim_cfg.traj, rng, enveloped=False),
            bias=bias,
            seed=int(rng.integers(0, 2**31)),
        )
        log = synthesize_log(cfg)
        samples = log.imu
        gyro_windows.append((samples, log.gt[0].q, log.gt[-1].q))
        accel_windows.append((samples, log.gt[0].q, log.gt[0].v, log.gt[-1].v))
    return gyro_windows, accel_windows


def train_bias_stages(run_cfg):
    """Stage 1 then stage 2 on freshly generated windows."""
    gyro_w, accel_w = make_bias_training_windows(run_cfg.sim, run_cfg.data, run_cfg.seed)
    gyro_params, gyro_hist = train_gyro_bias(gyro_w, run_cfg.sim.noise, run_cfg.bias_train)
    accel_params, accel_hist = train_accel_bias(
        accel_w, gyro_params, run_cfg.sim.noise, run_cfg.bias_train
    )
    return gyro_params, accel_params, gyro_hist, accel_hist


def make_logs(sim_cfg: SimConfig, n: int, seed_base: int) -> list[SensorLog]:
    logs = []
    rng = np.random.default_rng(seed_base)
    for i in range(n):
        cfg = replace(
            sim_cfg,
            traj=_randomized_traj(sim_cfg.traj, rng),
            seed=seed_base + i,
        )
        logs.append(synthesize_log(cfg))
    return logs


def refiner_dataset(logs: list[SensorLog], vo_scale: float = 1.0, bias=None):
    """(baseline, imu dv, dt, true v) rows from consecutive VO frames."""
    baselines, dvs, dts, targets = [], [], [], []
    for log in logs:
        records = build_frame_records(log, bias)
        prev = None
        for rec in records:
            if rec.vo is None:
                prev = None
                continue
            cur = rec.vo.pose.translation * vo_scale
            if prev is not None:
                t_prev, p_prev, pre = prev
                dt = rec.t - t_prev
                baselines.append((cur - p_prev) / dt)
                dvs.append(pre.dv)
                dts.append(dt)
                targets.append(rec.gt.v)
            prev = (rec.t, cur, rec.pre)
    return (np.array(baselines), np.array(dvs), np.array(dts), np.array(targets))


def train_refiner_on_logs(logs: list[SensorLog], vo_scale: float = 1.0, seed: int = 0):
    from .fusion import train_vo_refiner

    baselines, dvs, dts, targets = refiner_dataset(logs, vo_scale)
    return train_vo_refiner(baselines, dvs, dts, targets, seed=seed)


def sequence_bias(
    log: SensorLog, gyro_params, accel_params, window_s: float = 2.0, start_s: float = 1.5
):
    """Fixed per-sequence bias estimate from an early motion window.

    Skips the static prelude so the window statistics match the moving
    windows the estimator nets were trained on.
    """
    if gyro_params is None and accel_params is None:
        return BiasEstimate()
    dt = log.imu[1].t - log.imu[0].t
    lo = int(start_s / dt)
    hi = lo + max(8, int(window_s / dt))
    if hi > len(log.imu):
        lo, hi = 0, len(log.imu)
    return estimate_bias(gyro_params, accel_params, log.imu[lo:hi], log.noise)


def aligned_ate(trajectory: list[NavState], log: SensorLog) -> float:
    """SE(3)-aligned ATE of a fused frame trajectory against the log truth."""
    return ate_rmse(trajectory, log.gt, mode="se3").ate_rmse


# --- EKF fusion baseline ---------------------------------------------------


def _skew(v):
    return np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])


def run_ekf_fusion(
    records: list[FrameRecord],
    start_state: NavState,
    noise,
    vo_scale: float = 1.0,
    gravity=None,
    pos_meas_std: float = 0.02,
    rot_meas_std: float = 0.01,
) -> dict:
    """Loosely-coupled constant-noise error-state KF over (p, v, q).

    Propagates with the pre-integrated deltas and updates on VO position
    and orientation with fixed measurement noise. Comparison baseline
    only, not a product path.
    """
    from .imu import GRAVITY_W, sigma_position

    g = GRAVITY_W if gravity is None else np.asarray(gravity, dtype=float)
    state = start_state.copy()
    cov = np.eye(9) * 1e-6
    r_meas = np.diag([pos_meas_std**2] * 3 + [rot_meas_std**2] * 3)
    h_mat = np.zeros((6, 9))
    h_mat[0:3, 0:3] = np.eye(3)
    h_mat[3:6, 6:9] = np.eye(3)

    pos_errs, traj = [], []
    for rec in records:
        dt = rec.pre.dt
        rot = to_matrix(state.q)
        pred = strapdown_propagate(state, rec.pre, g)
        f_mat = np.eye(9)
        f_mat[0:3, 3:6] = dt * np.eye(3)
        f_mat[0:3, 6:9] = -rot @ _skew(rec.pre.dp)
        f_mat[3:6, 6:9] = -rot @ _skew(rec.pre.dv)
        f_mat[6:9, 6:9] = to_matrix(rec.pre.dq).T
        sig_p = sigma_position(noise, dt) + 1e-6
        sig_v = noise.accel_noise_density * math.sqrt(dt) + noise.accel_bias_stability * dt + 1e-6
        sig_t = noise.gyro_noise_density * math.sqrt(dt) + noise.gyro_bias_stability * dt + 1e-6
        q_proc = np.diag([sig_p**2] * 3 + [sig_v**2] * 3 + [sig_t**2] * 3)
        cov = f_mat @ cov @ f_mat.T + q_proc
        state = pred
        if rec.vo is not None:
            z = np.concatenate(
                [
                    rec.vo.pose.translation * vo_scale - state.p,
                    quat_err(rec.vo.pose.rotation, state.q),
                ]
            )
            s_mat = h_mat @ cov @ h_mat.T + r_meas
            gain = cov @ h_mat.T @ np.linalg.inv(s_mat)
            dx = gain @ z
            state = NavState(
                state.t,
                state.p + dx[0:3],
                state.v + dx[3:6],
                quat_mul(state.q, so3_exp(dx[6:9])),
            )
            cov = (np.eye(9) - gain @ h_mat) @ cov
        pos_errs.append(float(np.linalg.norm(state.p - rec.gt.p)))
        traj.append(state)
    pos_errs = np.array(pos_errs)
    return {
        "pos_errors": pos_errs,
        "rmse": float(np.sqrt(np.mean(pos_errs**2))),
        "trajectory": traj,
    }


# --- agent training --------------------------------------------------------


def train_fusion_agent(
    run_cfg,
    train_logs: list[SensorLog],
    bias_nets=(None, None),
    steps: int | None = None,
    warmstart_episodes: int = 3,
    warmstart_rounds: int = 6,
) -> tuple[PolicyHead, list[dict]]:
    """Warm start plus PPO fine-tuning of the fusion policy."""
    envs = []
    for log in train_logs:
        bias = sequence_bias(log, *bias_nets)
        envs.append(
            make_replay_env(
                log,
                "fusion",
                bias=bias,
                fusion_reward=run_cfg.fusion_reward,
                vo_scale=run_cfg.sim.vo.scale,
            )
        )
    head = make_fusion_head(seed=run_cfg.ppo_fusion.seed)
    warm_env = CyclingEnv(envs)
    warmstart_fusion(head, warm_env, episodes=warmstart_episodes, rounds=warmstart_rounds)
    cfg = run_cfg.ppo_fusion if steps is None else replace(run_cfg.ppo_fusion, env_steps=steps)
    result = train(lambda: CyclingEnv(envs), head, cfg)
    return result.head, result.curve


def train_select_agent(
    run_cfg,
    train_logs: list[SensorLog],
    fusion_policy=None,
    bias_nets=(None, None),
    cost_weight: float | None = None,
    steps: int | None = None,
) -> tuple[PolicyHead, list[dict]]:
    """PPO training of the skip/run scheduler against a frozen fusion policy."""
    reward_cfg = run_cfg.select_reward
    if cost_weight is not None:
        reward_cfg = replace(reward_cfg, cost_weight=cost_weight)
    envs = []
    for log in train_logs:
        bias = sequence_bias(log, *bias_nets)
        envs.append(
            make_replay_env(
                log,
                "select",
                fusion_policy or FixedWeightPolicy(0.9),
                bias=bias,
                select_reward=reward_cfg,
                fusion_reward=run_cfg.fusion_reward,
                vo_scale=run_cfg.sim.vo.scale,
            )
        )
    head = make_select_head(seed=run_cfg.ppo_select.seed)
    cfg = run_cfg.ppo_select if steps is None else replace(run_cfg.ppo_select, env_steps=steps)
    result = train(lambda: CyclingEnv(envs), head, cfg)
    return result.head, result.curve


def mlp_fusion_policy(head: PolicyHead):
    """Deterministic fusion policy callable for use inside the select env."""
    act = deterministic_policy(head)

    def policy(obs_vec):
        return FusionWeights.from_vector(act(obs_vec))

    return policy


# --- ablation studies -------------------------------------------------------


def study_fusion_strategy(run_cfg, steps: int | None = None) -> tuple[list[dict], PolicyHead, list[dict]]:
    """Heuristic fixed weight vs EKF vs RL-trained fusion on held-out logs."""
    train_logs = make_logs(run_cfg.sim, run_cfg.data.n_train_logs, run_cfg.seed + 100)
    eval_logs = make_logs(run_cfg.sim, run_cfg.data.n_eval_logs, run_cfg.seed + 1000)
    head, curve = train_fusion_agent(run_cfg, train_logs, steps=steps)

    def eval_env(log):
        return make_replay_env(
            log,
            "fusion",
            fusion_reward=run_cfg.fusion_reward,
            vo_scale=run_cfg.sim.vo.scale,
        )

    heuristic_ates, ekf_ates, rl_ates = [], [], []
    fixed = FixedWeightPolicy(0.9)
    rl_policy = deterministic_policy(head)
    for log in eval_logs:
        env = eval_env(log)
        res = run_fusion_policy(env, lambda obs: fixed(obs))
        heuristic_ates.append(aligned_ate(res["trajectory"], log))
        res = run_fusion_policy(eval_env(log), rl_policy)
        rl_ates.append(aligned_ate(res["trajectory"], log))
        records = build_frame_records(log)
        start = log.gt[0]
        ekf = run_ekf_fusion(
            records,
            start,
            log.noise,
            vo_scale=run_cfg.sim.vo.scale,
            gravity=log.gravity,
            pos_meas_std=max(0.02, run_cfg.sim.vo.pos_noise_std),
            rot_meas_std=max(0.01, run_cfg.sim.vo.rot_noise_std),
        )
        ekf_ates.append(aligned_ate(ekf["trajectory"], log))
    rows = [
        {"strategy": "heuristic-0.9", "ate": float(np.mean(heuristic_ates))},
        {"strategy": "ekf", "ate": float(np.mean(ekf_ates))},
        {"strategy": "rl", "ate": float(np.mean(rl_ates))},
    ]
    return rows, head, curve


def measure_select_policy(
    run_cfg, logs, policy, fusion_policy=None, bias_nets=(None, None)
) -> dict:
    """Mean aligned ATE / skip stats of a scheduling policy over logs."""
    ates, ratios, n_fs = [], [], []
    for log in logs:
        env = make_replay_env(
            log,
            "select",
            fusion_policy or FixedWeightPolicy(0.9),
            bias=sequence_bias(log, *bias_nets),
            select_reward=run_cfg.select_reward,
            fusion_reward=run_cfg.fusion_reward,
            vo_scale=run_cfg.sim.vo.scale,
        )
        res = run_select_policy(env, policy)
        ates.append(aligned_ate(res["trajectory"], log))
        ratios.append(res["skip_ratio"])
        n_fs.append(res["n_f"])
    return {
        "ate": float(np.mean(ates)),
        "skip_ratio": float(np.mean(ratios)),
        "n_f": float(np.mean(n_fs)),
    }


def study_skip_ratio(
    run_cfg,
    steps: int | None = None,
    cost_weights: tuple[float, ...] = (0.004, 0.012, 0.03),
    fusion_policy=None,
) -> list[dict]:
    """ATE vs skip ratio for fixed-interval, heuristic and learned policies."""
    train_logs = make_logs(run_cfg.sim, run_cfg.data.n_train_logs, run_cfg.seed + 200)
    eval_logs = make_logs(run_cfg.sim, run_cfg.data.n_eval_logs, run_cfg.seed + 2000)
    rows = []
    for interval in (1, 2, 4, 8):
        stats = measure_select_policy(
            run_cfg, eval_logs, FixedIntervalPolicy(interval), fusion_policy
        )
        rows.append({"strategy": "fixed", **stats})
    for thresh in (0.01, 0.03, 0.08):
        stats = measure_select_policy(
            run_cfg,
            eval_logs,
            HeuristicGatePolicy(dp_thresh=thresh, dq_thresh=3 * thresh, dt_cap=1.0),
            fusion_policy,
        )
        rows.append({"strategy": "heuristic", **stats})
    for cost in cost_weights:
        head, _ = train_select_agent(
            run_cfg, train_logs, fusion_policy, cost_weight=cost, steps=steps
        )
        stats = measure_select_policy(
            run_cfg, eval_logs, deterministic_policy(head), fusion_policy
        )
        rows.append({"strategy": "learned", "cost_weight": cost, **stats})
    return rows


def study_bias_components(run_cfg, interval: int = 10) -> tuple[list[dict], tuple]:
    """Strapdown and pipeline ATE for none / gyro-only / gyro+accel estimation."""
    if (
        float(np.max(np.abs(run_cfg.sim.bias.bg))) == 0.0
        and float(np.max(np.abs(run_cfg.sim.bias.ba))) == 0.0
    ):
        # the study needs drift to remove; inject representative biases
        run_cfg = dataclasses.replace(
            run_cfg,
            sim=replace(
                run_cfg.sim,
                bias=BiasEstimate(
                    np.array([0.02, -0.015, 0.01]), np.array([0.2, -0.15, 0.25])
                ),
            ),
        )
    gyro_params, accel_params, _, _ = train_bias_stages(run_cfg)
    eval_logs = make_logs(run_cfg.sim, run_cfg.data.n_eval_logs, run_cfg.seed + 3000)
    variants = [
        ("none", None, None),
        ("gyro-only", gyro_params, None),
        ("gyro+accel", gyro_params, accel_params),
    ]
    rows = []
    for name, gp, ap in variants:
        strap_errs, pipe_ates = [], []
        for log in eval_logs:
            bias = sequence_bias(log, gp, ap)
            # strapdown drift over the first 5 s clip
            dt = log.imu[1].t - log.imu[0].t
            n5 = min(len(log.imu), int(round(5.0 / dt)) + 1)
            pre = preintegrate(log.imu[:n5], bias, log.noise)
            end = strapdown_propagate(log.gt[0], pre, log.gravity)
            strap_errs.append(float(np.linalg.norm(end.p - log.gt[n5 - 1].p)))
            env = make_replay_env(
                log,
                "select",
                FixedWeightPolicy(0.9),
                bias=bias,
                select_reward=run_cfg.select_reward,
                fusion_reward=run_cfg.fusion_reward,
                vo_scale=run_cfg.sim.vo.scale,
            )
            res = run_select_policy(env, FixedIntervalPolicy(interval))
            pipe_ates.append(aligned_ate(res["trajectory"], log))
        rows.append(
            {
                "variant": name,
                "strapdown_ate": float(np.mean(strap_errs)),
                "pipeline_ate": float(np.mean(pipe_ates)),
            }
        )
    return rows, (gyro_params, accel_params)


def study_reward_map(
    run_cfg,
    a_values=None,
    b_values=None,
    fusion_policy=None,
) -> tuple[list[dict], list[dict]]:
    """Reward-difference map over (accuracy, cost) weights.

    Returns (map rows, the measured fixed-skip policy table used).
    """
    a_values = a_values if a_values is not None else np.linspace(0.1, 2.0, 20)
    b_values = b_values if b_values is not None else np.linspace(0.0, 0.05, 21)
    eval_logs = make_logs(run_cfg.sim, max(2, run_cfg.data.n_eval_logs // 2), run_cfg.seed + 4000)
    table = []
    for interval, name in ((1, "full-frame"), (2, "skip-50"), (4, "skip-75"), (8, "skip-87.5")):
        stats = measure_select_policy(
            run_cfg, eval_logs, FixedIntervalPolicy(interval), fusion_policy
        )
        table.append({"policy": name, "ate": stats["ate"], "n_f": stats["n_f"]})
    baseline = (table[0]["policy"], table[0]["ate"], table[0]["n_f"])
    policies = [(r["policy"], r["ate"], r["n_f"]) for r in table[1:]]
    rows = reward_tradeoff_map(
        a_values, b_values, policies, baseline, eps=run_cfg.select_reward.eps
    )
    return rows, table
