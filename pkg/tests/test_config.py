"""Config schema: strict keys, validation, presets, env seed override."""

import json

import pytest

from catr.config import (ConfigError, RunConfig, config_from_dict, config_to_dict, desk_preset,
                         load_config, paper_preset, save_config)


def test_roundtrip(tmp_path):
    cfg = desk_preset()
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert config_to_dict(back) == config_to_dict(cfg)


def test_unknown_top_level_key_rejected():
    payload = config_to_dict(desk_preset())
    payload["extra"] = 1
    with pytest.raises(ConfigError, match="extra"):
        config_from_dict(payload)


def test_unknown_section_key_rejected():
    payload = config_to_dict(desk_preset())
    payload["model"]["wombats"] = 3
    with pytest.raises(ConfigError, match="wombats"):
        config_from_dict(payload)


def test_version_required():
    payload = config_to_dict(desk_preset())
    payload["config_version"] = 99
    with pytest.raises(ConfigError, match="config_version"):
        config_from_dict(payload)


def test_invalid_json_is_config_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError):
        load_config(p)


@pytest.mark.parametrize("field,value", [
    ("channels", 0), ("blocks", -1), ("n_heads", 3), ("num_queries", 0),
    ("gate_channels", 7), ("dtype", "float16"),
])
def test_model_validation(field, value):
    cfg = RunConfig()
    setattr(cfg.model, field, value)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_batch_size_floor():
    cfg = RunConfig()
    cfg.optim.batch_size = 0
    with pytest.raises(ConfigError):
        cfg.validate()


def test_paper_preset_hyperparameters():
    cfg = paper_preset()
    assert cfg.optim.lr == 1e-5
    assert cfg.optim.batch_size == 4
    assert cfg.model.channels == 256
    assert cfg.model.num_queries == 50
    assert cfg.model.gate_channels == 256


def test_desk_preset_hyperparameters():
    cfg = desk_preset()
    assert cfg.model.channels == 64
    assert cfg.model.blocks == 2
    assert cfg.model.num_queries == 8
    assert cfg.optim.lr == 1e-4
    assert cfg.optim.steps == 2000
    assert cfg.optim.batch_size == 4


def test_env_seed_override(monkeypatch):
    monkeypatch.setenv("CATR_SEED", "4242")
    cfg = config_from_dict(config_to_dict(desk_preset()))
    assert cfg.optim.seed == 4242


def test_env_seed_must_be_int(monkeypatch):
    monkeypatch.setenv("CATR_SEED", "not-a-number")
    with pytest.raises(ConfigError):
        config_from_dict(config_to_dict(desk_preset()))
