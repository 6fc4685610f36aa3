import json
import os
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from rlvio.cli import main
from rlvio.ingest import read_log_dir, read_tum, write_log_dir, write_tum
from rlvio.sim import SimConfig, VoModel, synthesize_log


@pytest.fixture()
def runner():
    return CliRunner()


FAST_SIM = [
    "--set", "sim.duration=6.0",
    "--set", "sim.vo.pos_noise_std=0.004",
    "--set", "sim.vo.drift_std=0.01",
    "--set", "sim.noise.gyro_noise_density=1.7e-4",
    "--set", "sim.noise.accel_noise_density=2e-3",
]


def test_simulate_writes_expected_rows(runner, tmp_path):
    out = tmp_path / "log"
    result = runner.invoke(main, ["simulate", "--out", str(out), "--set", "sim.duration=2.0"])
    assert result.exit_code == 0, result.output
    imu_rows = [l for l in (out / "imu0" / "data.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(imu_rows) == 2 * 200 + 1
    cam_rows = [l for l in (out / "cam0" / "data.csv").read_text().splitlines() if not l.startswith("#")]
    assert len(cam_rows) == 2 * 20 + 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert "config_hash" in manifest and manifest["seed"] == 0


def test_simulate_zero_duration_header_only(runner, tmp_path):
    out = tmp_path / "log"
    result = runner.invoke(main, ["simulate", "--out", str(out), "--set", "sim.duration=0.0"])
    assert result.exit_code == 0, result.output
    rows = (out / "imu0" / "data.csv").read_text().splitlines()
    assert len(rows) == 1 and rows[0].startswith("#")


def test_simulate_deterministic(runner, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        result = runner.invoke(main, ["simulate", "--out", str(out), "--set", "sim.duration=1.0"])
        assert result.exit_code == 0, result.output
    for sub in ("imu0/data.csv", "cam0/data.csv", "vo0/data.csv",
                "state_groundtruth_estimate0/data.csv", "manifest.json", "sensor.yaml"):
        assert (a / sub).read_bytes() == (b / sub).read_bytes(), sub


def test_bad_config_exit_code(runner, tmp_path):
    result = runner.invoke(main, ["simulate", "--out", str(tmp_path / "x"), "--set", "sim.imu_rate=0"])
    assert result.exit_code == 2


def test_eval_identical_trajectories(runner, tmp_path):
    log = synthesize_log(SimConfig(duration=2.0))
    traj = log.gt[::10]
    est = tmp_path / "est.tum"
    gt = tmp_path / "gt.tum"
    write_tum(est, traj)
    write_tum(gt, traj)
    out = tmp_path / "metrics"
    result = runner.invoke(main, ["eval", "--est", str(est), "--gt", str(gt), "--out", str(out)])
    assert result.exit_code == 0, result.output
    metrics = json.loads(out.with_suffix(".json").read_text())
    assert metrics["ate_rmse"] < 1e-12
    assert out.with_suffix(".csv").exists()
    assert out.with_suffix(".png").exists()


def test_eval_sim3_reports_scale(runner, tmp_path):
    log = synthesize_log(SimConfig(duration=2.0))
    gt_traj = log.gt[::10]
    half = [type(s)(s.t, 0.5 * s.p, s.v, s.q) for s in gt_traj]
    est = tmp_path / "est.tum"
    gt = tmp_path / "gt.tum"
    write_tum(est, half)
    write_tum(gt, gt_traj)
    out = tmp_path / "metrics"
    result = runner.invoke(
        main, ["eval", "--est", str(est), "--gt", str(gt), "--mode", "sim3", "--out", str(out)]
    )
    assert result.exit_code == 0, result.output
    metrics = json.loads(out.with_suffix(".json").read_text())
    assert metrics["alignment_scale"] == pytest.approx(2.0)


def test_eval_parse_failure_exit_code(runner, tmp_path):
    bad = tmp_path / "bad.tum"
    bad.write_text("1 2 3\n")
    gt = tmp_path / "gt.tum"
    gt.write_text("")
    out = tmp_path / "m"
    result = runner.invoke(main, ["eval", "--est", str(bad), "--gt", str(gt), "--out", str(out)])
    assert result.exit_code == 3


def test_train_bias_and_run_roundtrip(runner, tmp_path):
    # tiny budgets: this exercises wiring, not model quality
    log_dir = tmp_path / "log"
    result = runner.invoke(main, ["simulate", "--out", str(log_dir), *FAST_SIM])
    assert result.exit_code == 0, result.output

    ckpt = tmp_path / "bias.ckpt"
    result = runner.invoke(main, [
        "train", "bias", "--out", str(ckpt), *FAST_SIM,
        "--set", "data.n_bias_windows=16",
        "--set", "data.bias_window_s=1.0",
        "--set", "data.bias_gyro_range=0.01",
        "--set", "data.bias_accel_range=0.1",
        "--set", "bias_train.epochs=120",
    ])
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    assert ckpt.with_suffix(".curve.csv").exists()
    assert ckpt.with_suffix(".curve.gyro.png").exists()

    run_out = tmp_path / "run"
    result = runner.invoke(main, [
        "run", "--log-dir", str(log_dir), "--out", str(run_out),
        "--bias-checkpoint", str(ckpt),
        "--heuristic-fusion", "--always-run", *FAST_SIM,
    ])
    assert result.exit_code == 0, result.output
    traj = read_tum(run_out / "trajectory.tum")
    assert len(traj) > 0
    manifest = json.loads((run_out / "run_manifest.json").read_text())
    assert manifest["skip_ratio"] == 0.0
    assert manifest["n_f"] == manifest["frames"]
    actions = [json.loads(l) for l in (run_out / "actions.jsonl").read_text().splitlines()]
    assert len(actions) == manifest["frames"]

    # determinism: re-run produces byte-identical outputs
    run_out2 = tmp_path / "run2"
    result = runner.invoke(main, [
        "run", "--log-dir", str(log_dir), "--out", str(run_out2),
        "--bias-checkpoint", str(ckpt),
        "--heuristic-fusion", "--always-run", *FAST_SIM,
    ])
    assert result.exit_code == 0, result.output
    assert (run_out / "trajectory.tum").read_bytes() == (run_out2 / "trajectory.tum").read_bytes()
    assert (run_out / "actions.jsonl").read_bytes() == (run_out2 / "actions.jsonl").read_bytes()
    assert (run_out / "run_manifest.json").read_bytes() == (run_out2 / "run_manifest.json").read_bytes()

    # evaluate the run against the log ground truth
    metrics = tmp_path / "metrics"
    result = runner.invoke(main, [
        "eval", "--est", str(run_out / "trajectory.tum"), "--gt", str(log_dir),
        "--out", str(metrics), "--run-manifest", str(run_out / "run_manifest.json"),
        "--true-scale", "1.0",
    ])
    assert result.exit_code == 0, result.output
    payload = json.loads(metrics.with_suffix(".json").read_text())
    assert payload["ate_rmse"] < 0.5  # wiring check, not a quality bar
    assert payload["scale_error"] < 30.0


def test_run_requires_policy_flags(runner, tmp_path):
    result = runner.invoke(main, ["run", "--log-dir", str(tmp_path), "--out", str(tmp_path / "o")])
    assert result.exit_code == 2


def test_train_select_requires_fusion(runner, tmp_path):
    result = runner.invoke(main, [
        "train", "select", "--out", str(tmp_path / "s.ckpt"),
        "--bias-checkpoint", str(tmp_path / "missing.ckpt"),
    ])
    assert result.exit_code in (2, 3)


def test_run_hover_log_fails_unobservable(runner, tmp_path):
    cfg = SimConfig(duration=6.0)
    from rlvio.sim import TrajectorySpec

    cfg.traj = TrajectorySpec(amp=np.zeros((3, 3)), yaw_amp=0.0, pitch_amp=0.0)
    log = synthesize_log(cfg)
    log_dir = tmp_path / "hover"
    write_log_dir(log, log_dir)
    result = runner.invoke(main, [
        "run", "--log-dir", str(log_dir), "--out", str(tmp_path / "out"),
        "--heuristic-fusion", "--always-run",
    ])
    assert result.exit_code == 3


def test_reward_map_ablation(runner, tmp_path):
    out = tmp_path / "map"
    result = runner.invoke(main, [
        "ablate", "reward_map", "--out", str(out), *FAST_SIM,
        "--set", "data.n_eval_logs=2",
    ])
    assert result.exit_code == 0, result.output
    assert (out / "reward_map.csv").exists()
    assert (out / "reward_map_policies.csv").exists()
    pngs = list(out.glob("reward_map_*.png"))
    assert len(pngs) >= 3
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "ablate:reward_map"
