"""Figure rendering for report outputs.

Every report-producing command writes a PNG next to its delimited
output; these helpers keep the rendering in one place. The Agg backend
is forced so commands run headless.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def learning_curve(curve_rows: list[dict], path, title: str = "Training curve") -> None:
    steps = [r["env_steps"] for r in curve_rows]
    rewards = [r["mean_episode_reward"] for r in curve_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(steps, rewards, lw=1.5)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean episode reward")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def loss_curve(losses: list[float], path, title: str, ylabel: str = "loss") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.semilogy(losses, lw=1.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def skip_ratio_ablation(rows: list[dict], path) -> None:
    """ATE against skip ratio, one line per scheduling strategy."""
    fig, ax = plt.subplots(figsize=(6, 4))
    strategies = sorted({r["strategy"] for r in rows})
    for strat in strategies:
        pts = sorted(
            [(r["skip_ratio"], r["ate"]) for r in rows if r["strategy"] == strat]
        )
        ax.plot([p[0] * 100 for p in pts], [p[1] for p in pts], "o-", label=strat)
    ax.set_xlabel("skip ratio [%]")
    ax.set_ylabel("ATE [m]")
    ax.set_title("Scheduling trade-off")
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def strategy_bars(rows: list[dict], path, title: str, key: str = "ate") -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [r["strategy"] for r in rows]
    vals = [r[key] for r in rows]
    ax.bar(names, vals, color="steelblue")
    ax.set_ylabel(f"{key.upper()} [m]")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    for i, v in enumerate(vals):
        ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=8)
    _save(fig, path)


def reward_map(rows: list[dict], policy: str, path) -> None:
    """Heatmap of the reward difference over the (A, B) grid with the
    sign boundary of preference between the policy and the baseline."""
    sel = [r for r in rows if r["policy"] == policy]
    a_vals = sorted({r["accuracy_weight"] for r in sel})
    b_vals = sorted({r["cost_weight"] for r in sel})
    grid = np.zeros((len(b_vals), len(a_vals)))
    for r in sel:
        i = b_vals.index(r["cost_weight"])
        j = a_vals.index(r["accuracy_weight"])
        grid[i, j] = r["delta_r"]
    fig, ax = plt.subplots(figsize=(6, 4.5))
    lim = max(abs(grid.min()), abs(grid.max()), 1e-12)
    im = ax.pcolormesh(a_vals, b_vals, grid, cmap="RdBu", vmin=-lim, vmax=lim)
    if grid.min() < 0.0 < grid.max():
        ax.contour(a_vals, b_vals, grid, levels=[0.0], colors="k", linewidths=1.0)
    fig.colorbar(im, ax=ax, label="reward difference vs baseline")
    ax.set_xlabel("accuracy weight")
    ax.set_ylabel("VO cost weight")
    ax.set_title(f"Reward preference: {policy}")
    _save(fig, path)


def trajectory_overlay(est, gt, path, title: str = "Trajectory") -> None:
    """Top-down overlay of estimated and ground-truth tracks."""
    pe = np.array([s.p for s in est])
    pg = np.array([s.p for s in gt])
    fig, ax = plt.subplots(figsize=(5.5, 5))
    ax.plot(pg[:, 0], pg[:, 1], "k-", lw=1.0, label="ground truth")
    ax.plot(pe[:, 0], pe[:, 1], "r--", lw=1.0, label="estimate")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def bias_ablation(rows: list[dict], path) -> None:
    """Grouped bars: strapdown-only and full-pipeline ATE per bias variant."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    names = [r["variant"] for r in rows]
    x = np.arange(len(names))
    dead = [r["strapdown_ate"] for r in rows]
    full = [r["pipeline_ate"] for r in rows]
    ax.bar(x - 0.2, dead, width=0.4, label="strapdown (5 s clips)", color="darkorange")
    ax.bar(x + 0.2, full, width=0.4, label="full pipeline", color="steelblue")
    ax.set_xticks(x, names)
    ax.set_ylabel("ATE [m]")
    ax.set_yscale("log")
    ax.set_title("Bias estimator components")
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    _save(fig, path)
