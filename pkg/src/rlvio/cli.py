"""Operator command line: simulate, train, run, eval, ablate.

Every command is deterministic given config + seed; manifests record
the resolved config hash and the hashes of any checkpoints used. Wall
times are printed to the console only, never written into outputs.
Report-producing commands render a PNG figure next to each CSV.
"""

from __future__ import annotations

import csv
import functools
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import plots
from .config import RunConfig, config_hash, file_hash, load_config, to_plain
from .errors import ConfigError, DataError, NumericalAbort
from .evaluation import ate_rmse, scale_error as scale_error_pct, schedule_stats
from .experiments import (
    make_logs,
    mlp_fusion_policy,
    sequence_bias,
    study_bias_components,
    study_fusion_strategy,
    study_reward_map,
    study_skip_ratio,
    train_bias_stages,
    train_fusion_agent,
    train_select_agent,
)
from .fusion import FixedWeightPolicy
from .imu import NavState
from .ingest import read_log_dir, read_tum, write_log_dir, write_tum
from .initialization import recover_scale_from_log
from .mlp import load_bundle, save_bundle
from .ppo import PolicyHead, deterministic_policy, make_fusion_head, make_select_head
from .select_env import run_select_policy
from .sim import make_replay_env, synthesize_log


def _guard(fn):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except DataError as exc:
            click.echo(f"data error: {exc}", err=True)
            sys.exit(3)
        except NumericalAbort as exc:
            click.echo(f"numerical abort: {exc}", err=True)
            sys.exit(4)

    return wrapper


def _config_options(fn):
    fn = click.option(
        "--config", "config_path", type=click.Path(), default=None,
        help="YAML run configuration.",
    )(fn)
    fn = click.option(
        "--set", "overrides", multiple=True, metavar="KEY=VALUE",
        help="Dotted-path config override, e.g. --set sim.seed=7.",
    )(fn)
    return fn


def _write_csv(path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


@click.group()
def main():
    """Desk-scale VIO with learned VO scheduling and adaptive fusion."""


@main.command()
@_config_options
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guard
def simulate(config_path, overrides, out_dir):
    """Generate a synthetic sensor log in EuRoC CSV layout."""
    cfg = load_config(config_path, list(overrides))
    log = synthesize_log(cfg.sim)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_log_dir(log, out)
    _write_json(
        out / "manifest.json",
        {"command": "simulate", "seed": cfg.sim.seed, "config_hash": config_hash(cfg),
         "config": to_plain(cfg.sim)},
    )
    click.echo(f"log written to {out} ({len(log.imu)} IMU rows, {len(log.frames)} frames)")


@main.command()
@click.argument("target", type=click.Choice(["bias", "select", "fusion"]))
@_config_options
@click.option("--out", "out_path", required=True, type=click.Path(), help="Checkpoint file.")
@click.option("--curve", "curve_path", type=click.Path(), default=None,
              help="Learning-curve CSV (default: <out>.curve.csv).")
@click.option("--steps", type=int, default=None, help="Override PPO env steps.")
@click.option("--bias-checkpoint", type=click.Path(), default=None)
@click.option("--fusion-checkpoint", type=click.Path(), default=None)
@click.option("--heuristic-fusion", is_flag=True, help="Use the fixed-0.9 fusion stand-in.")
@_guard
def train(target, config_path, overrides, out_path, curve_path, steps,
          bias_checkpoint, fusion_checkpoint, heuristic_fusion):
    """Train a learned component on synthetic data from the config."""
    cfg = load_config(config_path, list(overrides))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    curve_path = Path(curve_path) if curve_path else out.with_suffix(".curve.csv")
    t0 = time.perf_counter()

    if target == "bias":
        gyro, accel, gyro_hist, accel_hist = train_bias_stages(cfg)
        save_bundle(out, {"gyro": gyro, "accel": accel},
                    meta={"kind": "bias", "config_hash": config_hash(cfg)})
        rows = [{"stage": "gyro", "epoch": i, "loss": v} for i, v in enumerate(gyro_hist)]
        rows += [{"stage": "accel", "epoch": i, "loss": v} for i, v in enumerate(accel_hist)]
        _write_csv(curve_path, rows, ["stage", "epoch", "loss"])
        plots.loss_curve(gyro_hist, curve_path.with_suffix(".gyro.png"),
                         "Gyro bias training", "orientation loss")
        plots.loss_curve(accel_hist, curve_path.with_suffix(".accel.png"),
                         "Accel bias training", "velocity loss")
    else:
        bias_nets = (None, None)
        if bias_checkpoint is None:
            raise ConfigError(f"training {target!r} requires --bias-checkpoint")
        bias_nets = _load_bias(bias_checkpoint)
        train_logs = make_logs(cfg.sim, cfg.data.n_train_logs, cfg.seed + 100)
        if target == "fusion":
            head, curve = train_fusion_agent(cfg, train_logs, bias_nets=bias_nets, steps=steps)
            save_policy(out, head, {"kind": "fusion_policy", "config_hash": config_hash(cfg)})
        else:
            if fusion_checkpoint is not None:
                fusion_policy = mlp_fusion_policy(load_policy(fusion_checkpoint))
            elif heuristic_fusion:
                fusion_policy = FixedWeightPolicy(0.9)
            else:
                raise ConfigError(
                    "training 'select' requires --fusion-checkpoint or --heuristic-fusion"
                )
            head, curve = train_select_agent(
                cfg, train_logs, fusion_policy, bias_nets=bias_nets, steps=steps
            )
            save_policy(out, head, {"kind": "select_policy", "config_hash": config_hash(cfg)})
        _write_csv(curve_path, curve, ["update_idx", "env_steps", "mean_episode_reward"])
        plots.learning_curve(curve, curve_path.with_suffix(".png"),
                             f"{target} agent PPO training")
    click.echo(f"trained {target} in {time.perf_counter() - t0:.1f} s -> {out}")


def save_policy(path, head: PolicyHead, meta: dict) -> None:
    arrays = {}
    if head.log_std is not None:
        arrays["log_std"] = head.log_std
    save_bundle(path, {"trunk": head.trunk, "value": head.value}, arrays,
                {**meta, "head_kind": head.kind})


def load_policy(path) -> PolicyHead:
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    nets, arrays, meta = load_bundle(path)
    if "trunk" not in nets or "value" not in nets:
        raise DataError(f"{path}: not a policy checkpoint")
    return PolicyHead(meta["head_kind"], nets["trunk"], nets["value"], arrays.get("log_std"))


def _load_bias(path):
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    nets, _, meta = load_bundle(path)
    if meta.get("kind") != "bias":
        raise DataError(f"{path}: not a bias checkpoint")
    return nets["gyro"], nets["accel"]


@main.command()
@_config_options
@click.option("--log-dir", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--bias-checkpoint", type=click.Path(), default=None)
@click.option("--fusion-checkpoint", type=click.Path(), default=None)
@click.option("--heuristic-fusion", is_flag=True)
@click.option("--select-checkpoint", type=click.Path(), default=None)
@click.option("--always-run", is_flag=True, help="Run VO on every frame.")
@_guard
def run(config_path, overrides, log_dir, out_dir, bias_checkpoint,
        fusion_checkpoint, heuristic_fusion, select_checkpoint, always_run):
    """Closed-loop pipeline: initialize scale, then schedule + fuse."""
    cfg = load_config(config_path, list(overrides))
    if select_checkpoint is None and not always_run:
        raise ConfigError("need --select-checkpoint or --always-run")
    if fusion_checkpoint is None and not heuristic_fusion:
        raise ConfigError("need --fusion-checkpoint or --heuristic-fusion")
    t0 = time.perf_counter()
    log = read_log_dir(log_dir)
    checkpoints = {}
    bias_nets = (None, None)
    if bias_checkpoint:
        bias_nets = _load_bias(bias_checkpoint)
        checkpoints["bias"] = file_hash(bias_checkpoint)
    bias = sequence_bias(log, *bias_nets)
    init = recover_scale_from_log(
        log, cfg.rig, bias, cfg.init.n_pairs, cfg.init.keyframe_stride,
        cfg.init.align_samples, cfg.init.start_time,
    )
    solution = init.solution
    if fusion_checkpoint:
        fusion_policy = mlp_fusion_policy(load_policy(fusion_checkpoint))
        checkpoints["fusion"] = file_hash(fusion_checkpoint)
    else:
        fusion_policy = FixedWeightPolicy(0.9)
    if select_checkpoint:
        select_policy = deterministic_policy(load_policy(select_checkpoint))
        checkpoints["select"] = file_hash(select_checkpoint)
    else:
        select_policy = lambda obs: 1

    start_state = NavState(
        init.t_anchor, np.zeros(3), solution.velocities[0], init.q_anchor
    )
    env = make_replay_env(
        log, "select", fusion_policy,
        bias=bias,
        select_reward=cfg.select_reward,
        fusion_reward=cfg.fusion_reward,
        vo_scale=solution.s,
        start_state=start_state,
        start_time=init.t_anchor,
    )
    result = run_select_policy(env, select_policy)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tum(out / "trajectory.tum", result["trajectory"])
    with open(out / "actions.jsonl", "w") as fh:
        for i, (a, r, e) in enumerate(
            zip(result["actions"], result["rewards"], result["pos_errors"])
        ):
            fh.write(json.dumps(
                {"step": i, "action": int(a), "reward": float(r), "pos_err": float(e)},
                sort_keys=True) + "\n")
    n_f, skip_ratio = schedule_stats(result["actions"])
    _write_json(out / "run_manifest.json", {
        "command": "run",
        "config_hash": config_hash(cfg),
        "checkpoints": checkpoints,
        "scale": solution.s,
        "init_residual": solution.residual_norm,
        "n_f": n_f,
        "skip_ratio": skip_ratio,
        "frames": len(result["actions"]),
    })
    click.echo(
        f"run complete: {len(result['actions'])} frames, N_f={n_f}, "
        f"skip ratio {skip_ratio:.3f}, scale {solution.s:.6f}, "
        f"wall time {time.perf_counter() - t0:.2f} s"
    )


@main.command("eval")
@click.option("--est", "est_path", required=True, type=click.Path())
@click.option("--gt", "gt_path", required=True, type=click.Path(),
              help="TUM file or log directory with ground truth.")
@click.option("--mode", type=click.Choice(["se3", "sim3"]), default="se3")
@click.option("--out", "out_prefix", required=True, type=click.Path(),
              help="Prefix for metrics .csv/.json and the overlay figure.")
@click.option("--sequence", default="seq0")
@click.option("--run-manifest", type=click.Path(), default=None,
              help="run_manifest.json to pull n_f / skip ratio / scale from.")
@click.option("--true-scale", type=float, default=None)
@click.option("--assoc-tol", type=float, default=0.0025)
@click.option("--wall-time", type=float, default=None,
              help="Externally measured wall time to record.")
@_guard
def eval_cmd(est_path, gt_path, mode, out_prefix, sequence, run_manifest,
             true_scale, assoc_tol, wall_time):
    """Alignment metrics for an estimated trajectory."""
    est = read_tum(est_path)
    gt_p = Path(gt_path)
    if gt_p.is_dir():
        gt = read_log_dir(gt_p).gt
    else:
        gt = read_tum(gt_p)
    result = ate_rmse(est, gt, mode=mode, tol=assoc_tol)
    row = {
        "sequence": sequence,
        "mode": mode,
        "ate_rmse": result.ate_rmse,
        "alignment_scale": result.scale,
        "scale_error": "",
        "n_f": "",
        "skip_ratio": "",
        "wall_time": "" if wall_time is None else wall_time,
    }
    if run_manifest:
        with open(run_manifest) as fh:
            manifest = json.load(fh)
        row["n_f"] = manifest.get("n_f", "")
        row["skip_ratio"] = manifest.get("skip_ratio", "")
        if true_scale is not None and "scale" in manifest:
            row["scale_error"] = scale_error_pct(manifest["scale"], true_scale)
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    columns = ["sequence", "mode", "ate_rmse", "alignment_scale", "scale_error",
               "n_f", "skip_ratio", "wall_time"]
    _write_csv(out_prefix.with_suffix(".csv"), [row], columns)
    _write_json(out_prefix.with_suffix(".json"), {k: row[k] for k in columns})
    plots.trajectory_overlay(est, gt, out_prefix.with_suffix(".png"),
                             f"{sequence} ({mode}, ATE {result.ate_rmse:.4f} m)")
    click.echo(f"ATE ({mode}): {result.ate_rmse:.6f} m over {len(result.errors)} poses")


@main.command()
@click.argument("study", type=click.Choice(
    ["skip_ratio", "fusion_strategy", "bias_components", "reward_map"]))
@_config_options
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--steps", type=int, default=None, help="Override PPO env steps.")
@_guard
def ablate(study, config_path, overrides, out_dir, steps):
    """Reproduce one of the desk-scale ablation tables (CSV + figure)."""
    cfg = load_config(config_path, list(overrides))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if study == "fusion_strategy":
        rows, head, curve = study_fusion_strategy(cfg, steps=steps)
        _write_csv(out / "fusion_strategy.csv", rows, ["strategy", "ate"])
        plots.strategy_bars(rows, out / "fusion_strategy.png", "Fusion strategies")
        _write_csv(out / "fusion_training_curve.csv", curve,
                   ["update_idx", "env_steps", "mean_episode_reward"])
        plots.learning_curve(curve, out / "fusion_training_curve.png",
                             "Fusion agent PPO training")
        save_policy(out / "fusion_policy.ckpt", head,
                    {"kind": "fusion_policy", "config_hash": config_hash(cfg)})
    elif study == "skip_ratio":
        rows = study_skip_ratio(cfg, steps=steps)
        _write_csv(out / "skip_ratio.csv", rows,
                   ["strategy", "cost_weight", "skip_ratio", "n_f", "ate"])
        plots.skip_ratio_ablation(rows, out / "skip_ratio.png")
    elif study == "bias_components":
        rows, nets = study_bias_components(cfg)
        _write_csv(out / "bias_components.csv", rows,
                   ["variant", "strapdown_ate", "pipeline_ate"])
        plots.bias_ablation(rows, out / "bias_components.png")
        save_bundle(out / "bias_nets.ckpt", {"gyro": nets[0], "accel": nets[1]},
                    meta={"kind": "bias", "config_hash": config_hash(cfg)})
    else:
        rows, table = study_reward_map(cfg)
        _write_csv(out / "reward_map.csv", rows,
                   ["accuracy_weight", "cost_weight", "policy", "delta_r"])
        _write_csv(out / "reward_map_policies.csv", table, ["policy", "ate", "n_f"])
        for policy in sorted({r["policy"] for r in rows}):
            plots.reward_map(rows, policy, out / f"reward_map_{policy}.png")
    _write_json(out / "manifest.json", {
        "command": f"ablate:{study}",
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
    })
    click.echo(f"{study} study done in {time.perf_counter() - t0:.1f} s -> {out}")


if __name__ == "__main__":
    main()
