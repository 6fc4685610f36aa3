import numpy as np
import pytest

from rlvio.config import config_hash, load_config, to_plain
from rlvio.errors import ConfigError


def test_defaults_load():
    cfg = load_config()
    assert cfg.sim.imu_rate == 200.0
    assert cfg.ppo_select.learning_rate == pytest.approx(3e-4)
    assert cfg.ppo_select.entropy_coef == pytest.approx(0.05)
    assert cfg.ppo_fusion.gamma == pytest.approx(0.99)
    assert cfg.select_reward.eps == pytest.approx(0.05)


def test_yaml_file_and_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        """
seed: 7
sim:
  duration: 12.5
  vo:
    scale: 2.0
    pos_noise_std: 0.02
select_reward:
  cost_weight: 0.004
rig:
  t_bc: [0.1, 0.0, -0.05]
"""
    )
    cfg = load_config(path, ["sim.imu_rate=400", "ppo_fusion.seed=3"])
    assert cfg.seed == 7
    assert cfg.sim.duration == 12.5
    assert cfg.sim.vo.scale == 2.0
    assert cfg.sim.imu_rate == 400.0  # CLI override wins
    assert cfg.ppo_fusion.seed == 3
    assert np.allclose(cfg.rig.t_bc, [0.1, 0.0, -0.05])


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("simulation:\n  duration: 5\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(None, ["sim.nonexistent=1"])


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        load_config(None, ["sim.imu_rate=0"])
    with pytest.raises(ConfigError):
        load_config(None, ["select_reward.eps=0"])
    with pytest.raises(ConfigError):
        load_config(None, ["rig.g_w=[0, 0, 20]"])
    with pytest.raises(ConfigError):
        load_config(None, ["bad-syntax"])


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.yaml")


def test_hash_stable_and_sensitive():
    a = load_config()
    b = load_config()
    assert config_hash(a) == config_hash(b)
    c = load_config(None, ["seed=99"])
    assert config_hash(c) != config_hash(a)


def test_to_plain_serializes_everything():
    import json

    cfg = load_config()
    json.dumps(to_plain(cfg))
