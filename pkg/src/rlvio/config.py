"""Run configuration: YAML file + command-line overrides over defaults.

Precedence is CLI ``--set`` overrides > config file > built-in
defaults. Every output manifest records the SHA-256 of the resolved
configuration so runs are attributable.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, is_dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .fusion import FusionRewardConfig
from .geometry import Quat, normalize
from .imu import BiasTrainConfig
from .initialization import CalibratedRig
from .ppo import PpoConfig, fusion_agent_config, select_agent_config
from .select_env import SelectRewardConfig
from .sim import SimConfig


@dataclass
class TrainDataConfig:
    """How much synthetic data the training commands generate."""

    n_bias_windows: int = 60
    bias_window_s: float = 1.5
    bias_gyro_range: float = 0.03  # rad/s, uniform per-axis training biases
    bias_accel_range: float = 0.3  # m/s^2
    n_train_logs: int = 4
    n_eval_logs: int = 5


@dataclass
class InitConfig:
    n_pairs: int = 10
    keyframe_stride: int = 5
    align_samples: int = 50
    start_time: float = 1.0


@dataclass
class RunConfig:
    seed: int = 0
    sim: SimConfig = field(default_factory=SimConfig)
    select_reward: SelectRewardConfig = field(default_factory=SelectRewardConfig)
    fusion_reward: FusionRewardConfig = field(default_factory=FusionRewardConfig)
    ppo_select: PpoConfig = field(default_factory=lambda: select_agent_config(env_steps=200_000))
    ppo_fusion: PpoConfig = field(default_factory=lambda: fusion_agent_config(
        env_steps=200_000, learning_rate=2e-4, entropy_coef=0.002))
    rig: CalibratedRig = field(default_factory=CalibratedRig)
    init: InitConfig = field(default_factory=InitConfig)
    bias_train: BiasTrainConfig = field(default_factory=BiasTrainConfig)
    data: TrainDataConfig = field(default_factory=TrainDataConfig)


def _coerce(current, value, path: str):
    """Coerce a YAML value onto the type of the existing attribute."""
    if isinstance(current, np.ndarray):
        arr = np.asarray(value, dtype=float)
        if arr.shape != current.shape:
            raise ConfigError(f"{path}: expected shape {current.shape}, got {arr.shape}")
        return arr
    if isinstance(current, Quat):
        vals = list(value)
        if len(vals) != 4:
            raise ConfigError(f"{path}: quaternion needs 4 values (w x y z)")
        return normalize(Quat(*[float(v) for v in vals]))
    if isinstance(current, bool):
        return bool(value)
    if isinstance(current, int) and not isinstance(value, bool):
        return int(value)
    if isinstance(current, float):
        return float(value)
    if isinstance(current, tuple):
        return tuple(value)
    return value


def _apply_mapping(obj, mapping: dict, path: str = "") -> None:
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    valid = {f.name for f in fields(obj)}
    for key, value in mapping.items():
        here = f"{path}.{key}" if path else key
        if key not in valid:
            raise ConfigError(f"unknown config key: {here}")
        current = getattr(obj, key)
        if is_dataclass(current) and not isinstance(current, Quat):
            _apply_mapping(current, value, here)
        else:
            try:
                setattr(obj, key, _coerce(current, value, here))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{here}: {exc}") from None


def _apply_override(cfg: RunConfig, spec: str) -> None:
    if "=" not in spec:
        raise ConfigError(f"override must look like a.b.c=value, got {spec!r}")
    dotted, _, raw = spec.partition("=")
    value = yaml.safe_load(raw)
    parts = dotted.strip().split(".")
    obj = cfg
    for part in parts[:-1]:
        if not hasattr(obj, part):
            raise ConfigError(f"unknown config key: {dotted}")
        obj = getattr(obj, part)
    leaf = parts[-1]
    if not hasattr(obj, leaf):
        raise ConfigError(f"unknown config key: {dotted}")
    current = getattr(obj, leaf)
    if is_dataclass(current) and not isinstance(current, Quat):
        _apply_mapping(current, value, dotted)
    else:
        setattr(obj, leaf, _coerce(current, value, dotted))


def load_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    """Build the run configuration from defaults, a YAML file, and
    dotted-path overrides (in increasing precedence)."""
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        with open(p) as fh:
            try:
                doc = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"malformed config: {exc}") from None
        _apply_mapping(cfg, doc)
    for spec in overrides or []:
        _apply_override(cfg, spec)
    _revalidate(cfg)
    return cfg


def _revalidate(cfg: RunConfig) -> None:
    """Re-run dataclass validators after field mutation."""
    try:
        cfg.sim.__post_init__()
        cfg.select_reward.__post_init__()
        cfg.ppo_select.__post_init__()
        cfg.ppo_fusion.__post_init__()
        cfg.rig.__post_init__()
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from None


def to_plain(obj):
    """Dataclasses/arrays to JSON-serializable plain data."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: to_plain(v) for k, v in obj.items()}
    return obj


def config_hash(cfg) -> str:
    blob = json.dumps(to_plain(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()[:16]
