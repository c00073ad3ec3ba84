import math

import pytest

from growthlab.config import ExperimentConfig
from growthlab.errors import ConfigError


def test_round_trip_lossless():
    cfg = ExperimentConfig(
        phi=0.85, g_bar=-0.01, nu=1.6, sigma_u=0.02, sigma_eps=0.006,
        ar_order=3, discount_rate=0.08, n_firms=7, T=123, master_seed=99,
        n_bins=50, n_boot=77, tail_level=0.92, normalize=True,
        min_window=44, grid_step=0.02, output_dir="somewhere",
    )
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()


def test_inf_nu_round_trips():
    cfg = ExperimentConfig(nu=math.inf)
    text = cfg.to_text()
    assert "model.nu=inf" in text
    assert ExperimentConfig.from_text(text).nu == math.inf


def test_defaults_parse_from_empty():
    cfg = ExperimentConfig.from_text("")
    assert cfg == ExperimentConfig()


def test_unknown_and_duplicate_keys_rejected():
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_text("model.phy=0.5\n")
    with pytest.raises(ConfigError, match="duplicate"):
        ExperimentConfig.from_text("model.phi=0.5\nmodel.phi=0.6\n")
    with pytest.raises(ConfigError, match="key=value"):
        ExperimentConfig.from_text("model.phi 0.5\n")


def test_value_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("model.phi=fast\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("panel.n_firms=2.5\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("analysis.normalize=maybe\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("model.phi=1.5\n")  # ModelParams invariant
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("analysis.min_window=4\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_text("strategy.grid_step=0.6\n")


def test_comments_and_blank_lines_ignored():
    cfg = ExperimentConfig.from_text("# comment\n\nmodel.phi=0.7\n")
    assert cfg.phi == 0.7


def test_hash_changes_with_content():
    a = ExperimentConfig(master_seed=1)
    b = ExperimentConfig(master_seed=2)
    assert a.config_hash() != b.config_hash()


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.from_file("/nonexistent/config.txt")
