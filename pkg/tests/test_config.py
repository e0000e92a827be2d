import yaml
import pytest

from econ.config import Ablation, RunConfig, derive_seed, load_config
from econ.errors import ConfigError


def test_defaults_round_trip_through_yaml(tmp_path):
    text = RunConfig.defaults().to_yaml()
    raw = yaml.safe_load(text)
    assert raw["predictor"]["window"] == 5
    assert raw["labels"] == {"move_band": 0.005, "vol_threshold": 0.05}
    path = tmp_path / "run.yaml"
    path.write_text(text)
    assert load_config(path).predictor.window == 5


def test_window_outside_range_is_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("predictor:\n  window: 4\n")
    with pytest.raises(ConfigError):
        load_config(path)


def test_band_must_sit_below_threshold():
    with pytest.raises(ConfigError):
        load_config(**{"labels.move_band": 0.06})


def test_split_ratios_must_sum_to_one():
    with pytest.raises(ConfigError):
        load_config(**{"split.train": 0.8})


def test_filter_k_accepts_auto_all_and_positive_ints():
    assert load_config(**{"filter.k": "all"}).filter.k == "all"
    assert load_config(**{"filter.k": 6}).filter.k == 6
    with pytest.raises(ConfigError):
        load_config(**{"filter.k": 0})
    with pytest.raises(ConfigError):
        load_config(**{"filter.k": "some"})


def test_unknown_ablation_is_rejected():
    with pytest.raises(ConfigError):
        load_config(ablation="macro")


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_environment_overrides_file(tmp_path, monkeypatch):
    path = tmp_path / "run.yaml"
    path.write_text("predictor:\n  hidden_size: 16\nseed: 1\n")
    monkeypatch.setenv("ECON_PREDICTOR__HIDDEN_SIZE", "32")
    monkeypatch.setenv("ECON_SEED", "9")
    config = load_config(path)
    assert config.predictor.hidden_size == 32
    assert config.seed == 9


def test_override_wins_and_validates():
    config = RunConfig.defaults().override(**{"seed": "4", "ablation": "A", "filter.k": 3, "synth.n_days": None})
    assert config.seed == 4
    assert config.ablation == Ablation.MACRO_ONLY
    assert config.filter.k == 3
    assert config.synth.n_days == 500
    with pytest.raises(ConfigError):
        RunConfig.defaults().override(**{"predictor.window": 20})


def test_digest_covers_only_named_sections():
    base = RunConfig.defaults()
    changed = base.override(**{"predictor.hidden_size": 16})
    assert base.digest("filter", "labels") == changed.digest("filter", "labels")
    assert base.digest("predictor") != changed.digest("predictor")
    assert base.digest() != changed.digest()


def test_derived_seeds_are_stable_and_distinct():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert derive_seed(0, "train") != derive_seed(0, "selfaware")
    assert derive_seed(0, "train") != derive_seed(1, "train")
    assert 0 <= derive_seed(123, "synth") < 2**31


def test_lag_defaults_follow_the_data_source():
    config = RunConfig.defaults()
    assert config.data.synthetic
    assert config.filter.resolved_lag(synthetic=True) == 1
    assert config.filter.resolved_lag(synthetic=False) == 0
    assert config.data.use_trading_hours is False
