# -*- coding: utf-8 -*-
from pathlib import Path

import pytest

from telezoom.config import CemConfig, Config, DataConfig, KalConfig, ModelConfig, RunConfig, TrainConfig
from telezoom.errors import ConfigError


def test_defaults_round_trip_through_dict():
    cfg = RunConfig()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.data.zoom == 50 and cfg.cem.fallback == "drop_operational"


def test_load_fills_missing_keys(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("seed: 3\ndata:\n  zoom: 20\n  case: link\nkal:\n  max_outer: 4\n", encoding="utf-8")
    cfg = RunConfig.load(str(path))
    assert cfg.seed == 3
    assert cfg.data.zoom == 20 and cfg.data.case == "link"
    assert cfg.data.context_len == DataConfig().context_len
    assert cfg.kal.max_outer == 4 and cfg.kal.mu0 == KalConfig().mu0


def test_shipped_run_config_loads():
    assert isinstance(RunConfig.load(str(Path(__file__).resolve().parent.parent / "config" / "run.yaml")), RunConfig)


@pytest.mark.parametrize("body, match", [
    ("seeed: 3\n", "seeed"),
    ("data:\n  zooom: 3\n", "data.zooom"),
    ("- 1\n- 2\n", "mapping"),
    ("data: [unclosed\n", "YAML"),
])
def test_load_rejects_bad_files(tmp_path, body, match):
    path = tmp_path / "bad.yaml"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(ConfigError, match=match):
        RunConfig.load(str(path))


def test_load_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        RunConfig.load("no/such/run.yaml")


def test_overrides_skip_none_and_reject_unknown():
    cfg = RunConfig().with_overrides({"data.zoom": 25, "seed": None, "cem.time_budget_s": 2.5})
    assert cfg.data.zoom == 25 and cfg.seed == RunConfig().seed
    assert cfg.cem.time_budget_s == 2.5
    with pytest.raises(ConfigError, match="nope"):
        cfg.with_overrides({"data.nope": 1})


def test_overrides_revalidate_sections():
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"data.case": "cache"})


@pytest.mark.parametrize("build", [
    lambda: DataConfig(case="cache"),
    lambda: DataConfig(zoom=1),
    lambda: DataConfig(context_len=0),
    lambda: DataConfig(zoom=10, periodic_offset=10),
    lambda: ModelConfig(width=10, heads=4),
    lambda: ModelConfig(dropout=1.0),
    lambda: TrainConfig(emd_weight=-1.0),
    lambda: TrainConfig(batch_size=0),
    lambda: KalConfig(mu0=0.0),
    lambda: KalConfig(sharpness=-1.0),
    lambda: CemConfig(fallback="retry"),
])
def test_section_validation(build):
    with pytest.raises(ConfigError):
        build()


def test_environment_validation(monkeypatch):
    assert Config.validate()
    monkeypatch.setattr(Config, "WORKERS", 0)
    with pytest.raises(ConfigError, match="TELEZOOM_WORKERS"):
        Config.validate()
    monkeypatch.setattr(Config, "WORKERS", 2)
    monkeypatch.setattr(Config, "LOG_LEVEL", "chatty")
    with pytest.raises(ConfigError, match="LOG_LEVEL"):
        Config.validate()
