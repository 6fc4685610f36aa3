"""EuRoC-layout CSV parsing, TUM trajectory files, and log directories.

All disk formats use nanosecond integer timestamps (EuRoC) or float
seconds (TUM); everything is converted to SI seconds at this boundary.
Synthetic logs serialize to the same layouts, so simulated and real
data are interchangeable downstream.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

import numpy as np
import yaml

from .errors import DataError
from .fusion import VoObservation
from .geometry import Pose, Quat, normalize, slerp
from .imu import GRAVITY_W, ImuSample, NavState, NoiseProfile

NS = 1e-9


def _read_rows(path, n_cols: int) -> list[tuple[int, list[str]]]:
    """Numeric CSV rows with their 1-based line numbers; header lines skipped."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            first = row[0].strip()
            if lineno == 1 and not _is_number(first):
                continue  # header without leading '#'
            if len(row) != n_cols:
                raise DataError(f"expected {n_cols} columns, got {len(row)}", lineno)
            rows.append((lineno, [c.strip() for c in row]))
    return rows


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _parse_floats(row: list[str], lineno: int) -> list[float]:
    try:
        return [float(c) for c in row]
    except ValueError as exc:
        raise DataError(f"non-numeric field: {exc}", lineno) from None


def parse_euroc_imu(path) -> list[ImuSample]:
    """imu0/data.csv: timestamp [ns], omega xyz [rad/s], accel xyz [m/s^2]."""
    samples = []
    prev_t = None
    for lineno, row in _read_rows(path, 7):
        vals = _parse_floats(row, lineno)
        t = vals[0] * NS
        if prev_t is not None and t <= prev_t:
            raise DataError(f"non-monotone timestamp {row[0]}", lineno)
        prev_t = t
        samples.append(ImuSample(t, np.array(vals[1:4]), np.array(vals[4:7])))
    return samples


def parse_euroc_groundtruth(path) -> list[NavState]:
    """Ground-truth CSV: ns, p xyz, q wxyz, then optionally v xyz and more."""
    states = []
    prev_t = None
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and not _is_number(row[0].strip()):
                continue
            if len(row) < 8:
                raise DataError(f"expected >= 8 columns, got {len(row)}", lineno)
            vals = _parse_floats([c.strip() for c in row], lineno)
            t = vals[0] * NS
            if prev_t is not None and t <= prev_t:
                raise DataError(f"non-monotone timestamp {row[0]}", lineno)
            prev_t = t
            v = np.array(vals[8:11]) if len(vals) >= 11 else np.zeros(3)
            q = normalize(Quat(vals[4], vals[5], vals[6], vals[7]))
            states.append(NavState(t, np.array(vals[1:4]), v, q))
    return states


def parse_euroc_frames(path) -> list[float]:
    """cam0/data.csv: timestamp [ns], filename. Returns times in seconds."""
    times = []
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if lineno == 1 and not _is_number(row[0].strip()):
                continue
            if len(row) < 1:
                raise DataError("empty row", lineno)
            if not _is_number(row[0].strip()):
                raise DataError(f"non-numeric timestamp {row[0]!r}", lineno)
            times.append(float(row[0]) * NS)
    return times


def parse_vo_csv(path) -> list[tuple[float, VoObservation]]:
    """vo0/data.csv: ns, p xyz (non-metric), q wxyz, confidence."""
    out = []
    for lineno, row in _read_rows(path, 9):
        vals = _parse_floats(row, lineno)
        t = vals[0] * NS
        pose = Pose(normalize(Quat(vals[4], vals[5], vals[6], vals[7])), np.array(vals[1:4]))
        out.append((t, VoObservation(t, pose, float(np.clip(vals[8], 0.0, 1.0)))))
    return out


def interpolate_gt(gt: list[NavState], t: float) -> NavState:
    """Linear p/v and slerp q between the bracketing ground-truth states."""
    if not gt:
        raise ValueError("empty ground-truth list")
    times = [s.t for s in gt]
    if not times[0] <= t <= times[-1]:
        raise ValueError(f"t={t} outside ground-truth range [{times[0]}, {times[-1]}]")
    hi = int(np.searchsorted(times, t))
    if hi == 0:
        return gt[0].copy()
    if hi < len(times) and times[hi] == t:
        return gt[hi].copy()
    lo = hi - 1
    a, b = gt[lo], gt[hi]
    u = (t - a.t) / (b.t - a.t)
    return NavState(
        t,
        (1.0 - u) * a.p + u * b.p,
        (1.0 - u) * a.v + u * b.v,
        slerp(a.q, b.q, u),
    )


def associate(
    frame_times, sample_times, tol: float
) -> tuple[list[tuple[int, int]], list[int]]:
    """Nearest-neighbor pairing within tol; ties break toward the earlier sample.

    Returns (pairs of (frame index, sample index), unmatched frame indices).
    """
    frame_times = list(frame_times)
    sample_times = list(sample_times)
    pairs, unmatched = [], []
    for i, t in enumerate(frame_times):
        if not sample_times:
            unmatched.append(i)
            continue
        j = int(np.searchsorted(sample_times, t))
        best = None
        for cand in (j - 1, j):
            if 0 <= cand < len(sample_times):
                d = abs(sample_times[cand] - t)
                # strict < keeps the earlier candidate on exact ties
                if best is None or d < best[0]:
                    best = (d, cand)
        if best is not None and best[0] <= tol:
            pairs.append((i, best[1]))
        else:
            unmatched.append(i)
    return pairs, unmatched


def write_tum(path, trajectory: list[NavState]) -> None:
    """TUM text format: 'timestamp tx ty tz qx qy qz qw' per line."""
    with open(path, "w") as fh:
        for s in trajectory:
            fields = [s.t, s.p[0], s.p[1], s.p[2], s.q.x, s.q.y, s.q.z, s.q.w]
            fh.write(" ".join(repr(float(x)) for x in fields) + "\n")


def read_tum(path) -> list[NavState]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file: {path}")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 8:
                raise DataError(f"expected 8 fields, got {len(parts)}", lineno)
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise DataError(f"non-numeric field: {exc}", lineno) from None
            q = normalize(Quat(vals[7], vals[4], vals[5], vals[6]))
            out.append(NavState(vals[0], np.array(vals[1:4]), np.zeros(3), q))
    return out


# --- whole-log directories ----------------------------------------------


def _fmt_ns(t: float) -> str:
    return str(int(round(t / NS)))


def write_log_dir(log, out_dir) -> None:
    """Serialize a SensorLog to an EuRoC-style directory tree."""
    out = Path(out_dir)
    for sub in ("imu0", "cam0", "state_groundtruth_estimate0", "vo0"):
        os.makedirs(out / sub, exist_ok=True)
    with open(out / "imu0" / "data.csv", "w") as fh:
        fh.write("#timestamp [ns],w_x,w_y,w_z,a_x,a_y,a_z\n")
        for s in log.imu:
            vals = [*s.omega, *s.accel]
            fh.write(_fmt_ns(s.t) + "," + ",".join(repr(float(x)) for x in vals) + "\n")
    with open(out / "cam0" / "data.csv", "w") as fh:
        fh.write("#timestamp [ns],filename\n")
        for t, _ in log.frames:
            fh.write(f"{_fmt_ns(t)},{_fmt_ns(t)}.png\n")
    with open(out / "state_groundtruth_estimate0" / "data.csv", "w") as fh:
        fh.write("#timestamp [ns],p_x,p_y,p_z,q_w,q_x,q_y,q_z,v_x,v_y,v_z\n")
        for s in log.gt:
            vals = [*s.p, s.q.w, s.q.x, s.q.y, s.q.z, *s.v]
            fh.write(_fmt_ns(s.t) + "," + ",".join(repr(float(x)) for x in vals) + "\n")
    with open(out / "vo0" / "data.csv", "w") as fh:
        fh.write("#timestamp [ns],p_x,p_y,p_z,q_w,q_x,q_y,q_z,confidence\n")
        for t, vo in log.frames:
            if vo is None:
                continue
            p, q = vo.pose.translation, vo.pose.rotation
            vals = [*p, q.w, q.x, q.y, q.z, vo.confidence]
            fh.write(_fmt_ns(t) + "," + ",".join(repr(float(x)) for x in vals) + "\n")
    sensor = {
        "gyro_noise_density": float(log.noise.gyro_noise_density),
        "accel_noise_density": float(log.noise.accel_noise_density),
        "gyro_bias_stability": float(log.noise.gyro_bias_stability),
        "accel_bias_stability": float(log.noise.accel_bias_stability),
        "gravity": [float(x) for x in log.gravity],
    }
    with open(out / "sensor.yaml", "w") as fh:
        yaml.safe_dump(sensor, fh, sort_keys=True)


def read_log_dir(log_dir):
    """Load a SensorLog back from an EuRoC-style directory tree."""
    from .sim import SensorLog  # local import: sim depends on this module's peers

    root = Path(log_dir)
    imu = parse_euroc_imu(root / "imu0" / "data.csv")
    frame_times = parse_euroc_frames(root / "cam0" / "data.csv")
    gt = parse_euroc_groundtruth(root / "state_groundtruth_estimate0" / "data.csv")
    vo_path = root / "vo0" / "data.csv"
    vo_map: dict[float, VoObservation] = {}
    if vo_path.exists():
        for t, vo in parse_vo_csv(vo_path):
            vo_map[round(t, 9)] = vo
    frames = [(t, vo_map.get(round(t, 9))) for t in frame_times]
    sensor_path = root / "sensor.yaml"
    noise = NoiseProfile()
    gravity = GRAVITY_W.copy()
    if sensor_path.exists():
        with open(sensor_path) as fh:
            sensor = yaml.safe_load(fh) or {}
        noise = NoiseProfile(
            sensor.get("gyro_noise_density", 0.0),
            sensor.get("accel_noise_density", 0.0),
            sensor.get("gyro_bias_stability", 0.0),
            sensor.get("accel_bias_stability", 0.0),
        )
        gravity = np.array(sensor.get("gravity", GRAVITY_W.tolist()), dtype=float)
    return SensorLog(imu, frames, gt, noise, gravity)
