"""Proximal policy optimization with GAE, on the in-house MLP stack.

Two head types cover both agents: a Bernoulli logit for the binary
skip/run scheduler and a squashed diagonal Gaussian emitting fusion
weights in [0, 1]^7. Training is single-threaded and fully seeded;
identical config and seed give bit-identical learning curves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NumericalAbort
from .mlp import AdamState, MlpParams, adam_step, backward, forward, init_mlp

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PpoConfig:
    env_steps: int = 1_000_000
    learning_rate: float = 3e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    batch_size: int = 64
    epochs_per_update: int = 10
    entropy_coef: float = 0.05
    value_coef: float = 0.5
    rollout_horizon: int = 2048
    max_grad_norm: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0 or not 0.0 < self.gae_lambda <= 1.0:
            raise ValueError("gamma and gae_lambda must lie in (0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be positive")


def select_agent_config(**overrides) -> PpoConfig:
    """Defaults for the scheduler agent."""
    return replace(PpoConfig(learning_rate=3e-4, entropy_coef=0.05), **overrides)


def fusion_agent_config(**overrides) -> PpoConfig:
    """Defaults for the fusion agent."""
    return replace(PpoConfig(learning_rate=5e-4, entropy_coef=0.02), **overrides)


@dataclass
class PolicyHead:
    """Policy trunk plus value net; ``log_std`` only for the Gaussian head."""

    kind: str  # "bernoulli" | "squashed_gaussian"
    trunk: MlpParams
    value: MlpParams
    log_std: np.ndarray | None = None

    @property
    def action_dim(self) -> int:
        return self.trunk.out_dim if self.kind == "squashed_gaussian" else 1


def make_select_head(obs_dim: int = 10, hidden=(64, 64), seed: int = 0) -> PolicyHead:
    rng = np.random.default_rng(seed)
    trunk = init_mlp([obs_dim, *hidden, 1], ["tanh", "tanh", "identity"], rng)
    value = init_mlp([obs_dim, *hidden, 1], ["tanh", "tanh", "identity"], rng)
    return PolicyHead("bernoulli", trunk, value)


def make_fusion_head(
    obs_dim: int = 24,
    action_dim: int = 7,
    hidden=(64, 64),
    seed: int = 0,
    init_log_std: float = -2.0,
) -> PolicyHead:
    rng = np.random.default_rng(seed)
    trunk = init_mlp([obs_dim, *hidden, action_dim], ["tanh", "tanh", "identity"], rng)
    value = init_mlp([obs_dim, *hidden, 1], ["tanh", "tanh", "identity"], rng)
    return PolicyHead("squashed_gaussian", trunk, value, np.full(action_dim, init_log_std))


def gae(rewards, values, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over one episode segment.

    ``values`` has one more entry than ``rewards``: the bootstrap value
    of the state after the last reward (zero at a terminal state).
    Returns (advantages, returns) with returns = advantages + values[:-1].
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    if len(values) != len(rewards) + 1:
        raise ValueError("values must have len(rewards) + 1 entries")
    t_len = len(rewards)
    adv = np.zeros(t_len)
    acc = 0.0
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def ppo_surrogate(logp_new, logp_old, advantage, clip: float) -> float:
    """Clipped-surrogate loss contribution (mean over the batch)."""
    logp_new = np.asarray(logp_new, dtype=float)
    ratio = np.exp(logp_new - np.asarray(logp_old, dtype=float))
    adv = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    return float(np.mean(-np.minimum(ratio * adv, clipped * adv)))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _bernoulli_logp(logit, action):
    # log sigmoid(l) for a=1, log sigmoid(-l) for a=0, via stable softplus
    sign = np.where(action > 0.5, 1.0, -1.0)
    return -np.log1p(np.exp(-sign * logit))


def _gaussian_logp(z, mean, log_std):
    """Log density of the squashed sample; z is the pre-squash value."""
    std = np.exp(log_std)
    core = -0.5 * ((z - mean) / std) ** 2 - log_std - 0.5 * LOG_2PI
    a = _sigmoid(z)
    squash = np.log(a) + np.log1p(-a)  # log |da/dz| = log a(1-a)
    return np.sum(core - squash, axis=-1)


def policy_act(
    head: PolicyHead, obs: np.ndarray, deterministic: bool, rng: np.random.Generator
) -> tuple[object, float, float]:
    """Sample (or take the mode of) the policy; returns (action, logp, value)."""
    action, logp, value, _ = _act_full(head, obs, deterministic, rng)
    return action, logp, value


def _act_full(head, obs, deterministic, rng):
    obs = np.asarray(obs, dtype=float)
    out = forward(head.trunk, obs)
    value = float(forward(head.value, obs)[0])
    if head.kind == "bernoulli":
        logit = float(out[0])
        if deterministic:
            action = int(logit > 0.0)
        else:
            action = int(rng.random() < _sigmoid(logit))
        logp = float(_bernoulli_logp(logit, action))
        return action, logp, value, float(action)
    if head.kind == "squashed_gaussian":
        if deterministic:
            z = out.copy()
        else:
            z = out + np.exp(head.log_std) * rng.standard_normal(out.shape)
        action = _sigmoid(z)
        logp = float(_gaussian_logp(z, out, head.log_std))
        return action, logp, value, z
    raise ValueError(f"unknown head kind {head.kind!r}")


def deterministic_policy(head: PolicyHead):
    """Callable obs -> action using the policy mode (no sampling)."""
    rng = np.random.default_rng(0)

    def act(obs):
        action, _, _ = policy_act(head, obs, True, rng)
        return action

    return act


@dataclass
class TrainResult:
    head: PolicyHead
    curve: list[dict]  # update_idx, env_steps, mean_episode_reward


def _global_grad_norm(grad_lists) -> float:
    total = 0.0
    for g in grad_lists:
        total += float(np.sum(g * g))
    return math.sqrt(total)


def train(env_factory, head: PolicyHead, cfg: PpoConfig) -> TrainResult:
    """PPO training loop: rollouts, GAE, clipped-surrogate minibatch updates.

    ``env_factory()`` must build an environment with gym-style
    ``reset() -> obs`` and ``step(a) -> (obs, reward, done, info)``.
    Raises NumericalAbort when a loss goes non-finite.
    """
    rng = np.random.default_rng(cfg.seed)
    env = env_factory()
    state = _OptState(head)

    curve: list[dict] = []
    obs = env.reset()
    ep_reward = 0.0
    last_mean = 0.0
    steps_done = 0
    n_updates = max(1, cfg.env_steps // cfg.rollout_horizon)

    for update_idx in range(1, n_updates + 1):
        obs_buf, raw_buf, logp_buf, rew_buf, val_buf, done_buf = [], [], [], [], [], []
        completed: list[float] = []
        for _ in range(cfg.rollout_horizon):
            action, logp, value, raw = _act_full(head, obs, False, rng)
            nxt, reward, done, _ = env.step(action)
            obs_buf.append(np.asarray(obs, dtype=float))
            raw_buf.append(np.atleast_1d(np.asarray(raw, dtype=float)))
            logp_buf.append(logp)
            rew_buf.append(reward)
            val_buf.append(value)
            done_buf.append(done)
            ep_reward += reward
            if done:
                completed.append(ep_reward)
                ep_reward = 0.0
                nxt = env.reset()
            obs = nxt
        steps_done += cfg.rollout_horizon

        # per-episode-segment GAE with bootstrap at rollout truncation
        adv_all = np.zeros(cfg.rollout_horizon)
        ret_all = np.zeros(cfg.rollout_horizon)
        rew_arr = np.array(rew_buf)
        val_arr = np.array(val_buf)
        start = 0
        for t in range(cfg.rollout_horizon):
            if done_buf[t] or t == cfg.rollout_horizon - 1:
                boot = 0.0 if done_buf[t] else float(forward(head.value, obs)[0])
                values = np.append(val_arr[start : t + 1], boot)
                adv_all[start : t + 1], ret_all[start : t + 1] = gae(
                    rew_arr[start : t + 1], values, cfg.gamma, cfg.gae_lambda
                )
                start = t + 1

        obs_arr = np.array(obs_buf)
        raw_arr = np.array(raw_buf)
        logp_arr = np.array(logp_buf)
        for _ in range(cfg.epochs_per_update):
            order = rng.permutation(cfg.rollout_horizon)
            for lo in range(0, cfg.rollout_horizon, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                if len(idx) < 2:
                    continue
                _minibatch_step(
                    head,
                    obs_arr[idx],
                    raw_arr[idx],
                    logp_arr[idx],
                    adv_all[idx],
                    ret_all[idx],
                    cfg,
                    state,
                )

        if completed:
            last_mean = float(np.mean(completed))
        curve.append(
            {
                "update_idx": update_idx,
                "env_steps": steps_done,
                "mean_episode_reward": last_mean,
            }
        )
    return TrainResult(head, curve)


class _OptState:
    """Adam accumulators for trunk, value net and (optionally) log_std."""

    def __init__(self, head: PolicyHead):
        self.trunk = AdamState.for_params(head.trunk)
        self.value = AdamState.for_params(head.value)
        self.m_std = np.zeros_like(head.log_std) if head.log_std is not None else None
        self.v_std = np.zeros_like(head.log_std) if head.log_std is not None else None
        self.std_step = 0


def ppo_loss_and_grads(head, obs, raw, logp_old, adv, ret, cfg):
    """Combined PPO loss (surrogate + value - entropy) and its gradients.

    ``adv`` is used as given; normalization happens in the caller.
    Returns (loss, trunk grads, value grads, log_std grad or None).
    """
    b = len(obs)
    out = forward(head.trunk, obs)
    values = forward(head.value, obs)[:, 0]

    if head.kind == "bernoulli":
        logit = out[:, 0]
        action = raw[:, 0]
        logp_new = _bernoulli_logp(logit, action)
    else:
        z = raw
        logp_new = _gaussian_logp(z, out, head.log_std)

    ratio = np.exp(logp_new - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio) * adv
    policy_loss = -np.mean(np.minimum(unclipped, clipped))
    value_loss = np.mean((values - ret) ** 2)
    if not np.isfinite(policy_loss) or not np.isfinite(value_loss):
        raise NumericalAbort(
            f"non-finite PPO loss (policy={policy_loss}, value={value_loss})"
        )

    # dL/dlogp is nonzero only where the unclipped branch attains the min
    active = (unclipped <= clipped).astype(float)
    dlogp = -(active * ratio * adv) / b

    grad_std = None
    if head.kind == "bernoulli":
        p = _sigmoid(logit)
        entropy = float(np.mean(-p * np.log(p + 1e-300) - (1 - p) * np.log(1 - p + 1e-300)))
        dlogit = dlogp * (action - p)
        # entropy bonus: dH/dlogit = -logit * p * (1 - p)
        dlogit += cfg.entropy_coef * logit * p * (1.0 - p) / b
        upstream = dlogit[:, None]
    else:
        std = np.exp(head.log_std)
        entropy = float(np.sum(head.log_std + 0.5 * (1.0 + LOG_2PI)))
        zc = (z - out) / std
        upstream = dlogp[:, None] * (zc / std)  # d logp / d mean
        # d logp / d log_std = zc^2 - 1; pre-squash Gaussian entropy adds
        # dH/dlog_std = 1 per dimension
        grad_std = np.sum(dlogp[:, None] * (zc**2 - 1.0), axis=0)
        grad_std -= cfg.entropy_coef

    g_trunk, _ = backward(head.trunk, obs, upstream)
    g_value, _ = backward(
        head.value, obs, (cfg.value_coef * 2.0 * (values - ret) / b)[:, None]
    )
    loss = float(policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy)
    return loss, g_trunk, g_value, grad_std


def _minibatch_step(head, obs, raw, logp_old, adv, ret, cfg, opt: _OptState):
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    _, g_trunk, g_value, grad_std = ppo_loss_and_grads(
        head, obs, raw, logp_old, adv, ret, cfg
    )

    flat = g_trunk.weights + g_trunk.biases + g_value.weights + g_value.biases
    if grad_std is not None:
        flat = flat + [grad_std]
    norm = _global_grad_norm(flat)
    if norm > cfg.max_grad_norm:
        scale = cfg.max_grad_norm / norm
        for g in flat:
            g *= scale

    adam_step(head.trunk, g_trunk, opt.trunk, cfg.learning_rate)
    adam_step(head.value, g_value, opt.value, cfg.learning_rate)
    if grad_std is not None:
        opt.std_step += 1
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        opt.m_std *= beta1
        opt.m_std += (1.0 - beta1) * grad_std
        opt.v_std *= beta2
        opt.v_std += (1.0 - beta2) * grad_std * grad_std
        c1 = 1.0 - beta1**opt.std_step
        c2 = 1.0 - beta2**opt.std_step
        head.log_std -= cfg.learning_rate * (opt.m_std / c1) / (
            np.sqrt(opt.v_std / c2) + eps
        )


def warmstart_fusion(
    head: PolicyHead,
    env,
    episodes: int = 5,
    epochs: int = 200,
    lr: float = 1e-3,
    seed: int = 0,
    rounds: int = 3,
) -> list[float]:
    """Supervised warm start of the fusion policy mean.

    Regresses the trunk toward the pre-squash images of the one-step
    optimal weights the environment exposes. Data collection iterates:
    the first round explores with uniform random weights, later rounds
    roll the current stochastic policy and relabel the states it
    actually visits, aligning the training distribution with deployment.
    Targets are clipped away from 0/1 to avoid squash saturation.
    Returns the regression loss history.
    """
    rng = np.random.default_rng(seed)
    opt = AdamState.for_params(head.trunk)
    # weight j of the 7-vector drives these slots of the 9-comp error stack
    slot_of_weight = [(0,), (1,), (2,), (3,), (4,), (5,), (6, 7, 8)]
    rounds_data: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    history: list[float] = []
    for rnd in range(rounds):
        obs_rows, drift_rows, voerr_rows = [], [], []
        for _ in range(episodes):
            obs = env.reset()
            done = False
            while not done:
                errs = env.peek_fusion_errors()
                if errs is not None:
                    obs_rows.append(np.asarray(obs, dtype=float))
                    drift_rows.append(errs[0])
                    voerr_rows.append(errs[1])
                if rnd == 0:
                    action = rng.uniform(0.0, 1.0, head.action_dim)
                else:
                    action, _, _ = policy_act(head, obs, False, rng)
                obs, _, done, _ = env.step(action)
        if not obs_rows:
            raise ValueError("no VO frames found for the warm start")
        rounds_data.append(
            (np.array(obs_rows), np.array(drift_rows), np.array(voerr_rows))
        )
        # fit on the two most recent rounds: on-policy state distribution
        recent = rounds_data[-2:]
        feats = np.concatenate([d[0] for d in recent])
        drift = np.concatenate([d[1] for d in recent])
        vo_err = np.concatenate([d[2] for d in recent])
        n = len(feats)
        for _ in range(epochs):
            z = forward(head.trunk, feats)
            a = _sigmoid(z)
            a9 = a[:, [0, 1, 2, 3, 4, 5, 6, 6, 6]]
            fused_err = (1.0 - a9) * drift + a9 * vo_err
            d_a9 = 2.0 * fused_err * (vo_err - drift)
            upstream = np.zeros_like(z)
            for j, slots in enumerate(slot_of_weight):
                upstream[:, j] = sum(d_a9[:, s] for s in slots)
            upstream *= a * (1.0 - a) / n
            grads, _ = backward(head.trunk, feats, upstream)
            adam_step(head.trunk, grads, opt, lr)
            history.append(float(np.mean(np.sum(fused_err**2, axis=1))))
    return history
