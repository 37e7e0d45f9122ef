"""
Test suite for run settings and scenario configuration files

Validates the bundled scenario catalogue and checks that malformed
configurations are rejected with the path of the offending field.
"""

import json
import os
import tempfile

import pytest

from renewal import config
from renewal.asym import Formula
from renewal.config import Settings
from renewal.errors import ConfigError
from renewal.harness import ScenarioKind
from renewal.weights import ExpModulated, WindowKind


def scenario(**overrides):
    base = {
        "name": "s",
        "model": {"kind": "lattice_table", "table": {"1": 0.5, "2": 0.5}},
        "x_grid": [100, 200],
    }
    base.update(overrides)
    return base


class TestCatalogue:
    """Test suite for the bundled scenario files."""

    def test_catalogue_loads(self):
        """Test that every bundled file validates."""
        entries = config.list_catalogue()
        assert len(entries) >= 11
        assert all(e["file"].endswith(".json") for e in entries)

    def test_catalogue_names_are_unique(self):
        """Test that no two bundled scenarios share a name."""
        names = [e["name"] for e in config.list_catalogue()]
        assert len(names) == len(set(names))
        assert {"blackwell", "lemma3", "stone_shepp"} <= set(names)

    def test_catalogue_path(self):
        """Test resolving a bundled file by stem or file name."""
        assert config.catalogue_path("lemma3") == config.catalogue_path("lemma3.json")
        assert config.catalogue_path("lemma3").exists()

    def test_unknown_catalogue_entry(self):
        """Test that an unknown bundled name raises."""
        with pytest.raises(ConfigError, match="No bundled scenario"):
            config.catalogue_path("nonexistent")

    def test_bundled_file_builds(self):
        """Test that a bundled file turns into runnable scenarios."""
        cfg = config.load_config(str(config.catalogue_path("lemma3")))
        (sc,) = config.build_scenarios(cfg, root_seed=9)
        assert sc.kind == ScenarioKind.LEMMA3
        assert sc.n == 100
        assert sc.seed == 9


class TestConfigValidation:
    """Test suite for configuration validation."""

    @pytest.fixture
    def temp_config(self):
        """Fixture to create and cleanup temporary config files."""
        temp_files = []

        def create_config(config_data, raw=False):
            temp_file = tempfile.NamedTemporaryFile(mode="w", delete=False, suffix=".json")
            if raw:
                temp_file.write(config_data)
            else:
                json.dump(config_data, temp_file)
            temp_file.close()
            temp_files.append(temp_file.name)
            return temp_file.name

        yield create_config

        for temp_path in temp_files:
            try:
                os.unlink(temp_path)
            except FileNotFoundError:
                pass

    def test_valid_file(self, temp_config):
        """Test that a minimal comparison loads with its defaults."""
        cfg = config.load_config(temp_config({"scenarios": [scenario()], "seed": 4}))
        assert cfg.seed == 4
        spec = cfg.scenarios[0]
        assert spec.predictor == Formula.WEIGHTED
        assert spec.tolerance == 0.01

    def test_single_scenario_object(self, temp_config):
        """Test that a bare scenario object is accepted as a one-item file."""
        cfg = config.load_config(temp_config(scenario(name="solo")))
        assert [s.name for s in cfg.scenarios] == ["solo"]

    def test_missing_file(self):
        """Test that a missing file raises."""
        with pytest.raises(ConfigError, match="Configuration file not found"):
            config.load_config("/nonexistent/run.json")

    def test_invalid_json(self, temp_config):
        """Test that a malformed document raises."""
        with pytest.raises(ConfigError, match="Invalid JSON"):
            config.load_config(temp_config("{not json", raw=True))

    def test_unknown_key(self, temp_config):
        """Test that unknown keys are rejected with their path."""
        with pytest.raises(ConfigError) as info:
            config.load_config(temp_config({"scenarios": [scenario(bogus=1)]}))
        assert info.value.path == "scenarios.0.bogus"

    def test_nonpositive_delta(self, temp_config):
        """Test that delta <= 0 is rejected."""
        with pytest.raises(ConfigError) as info:
            config.load_config(temp_config({"scenarios": [scenario(delta=0)]}))
        assert info.value.path == "scenarios.0.delta"

    def test_duplicate_names(self, temp_config):
        """Test that two scenarios with one name are rejected."""
        data = {"scenarios": [scenario(), scenario()]}
        with pytest.raises(ConfigError, match="duplicate scenario names: s"):
            config.load_config(temp_config(data))

    def test_unknown_model_kind(self, temp_config):
        """Test that an unknown model kind is rejected."""
        data = {"scenarios": [scenario(model={"kind": "cauchy"})]}
        with pytest.raises(ConfigError) as info:
            config.load_config(temp_config(data))
        assert info.value.path.startswith("scenarios.0.model")

    def test_comparison_needs_grid(self, temp_config):
        """Test that a comparison without x values is rejected."""
        with pytest.raises(ConfigError, match="non-empty x_grid"):
            config.load_config(temp_config({"scenarios": [scenario(x_grid=[])]}))

    def test_lemma3_needs_steps(self):
        """Test that a window-count scenario with n = 0 is rejected."""
        with pytest.raises(ConfigError, match="n >= 1"):
            config.validate_config(scenario(kind="lemma3"))

    def test_bad_probabilities_fail_at_build(self, temp_config):
        """Test that a table not summing to 1 is reported against its scenario."""
        data = {"scenarios": [scenario(name="bad", model={"kind": "lattice", "probs": [0.5, 0.4]})]}
        cfg = config.load_config(temp_config(data))
        with pytest.raises(ConfigError, match="sum to") as info:
            config.build_scenarios(cfg)
        assert info.value.path == "scenarios.0.bad"

    def test_scenario_seed_overrides_root(self):
        """Test that a scenario seed wins over the run seed."""
        cfg = config.validate_config({"scenarios": [scenario(seed=3), scenario(name="t")]})
        seeds = [sc.seed for sc in config.build_scenarios(cfg, root_seed=11)]
        assert seeds == [3, 11]


class TestSettings:
    """Test suite for environment-driven settings."""

    @pytest.fixture
    def no_env_file(self, tmp_path):
        return str(tmp_path / "missing.env")

    def test_defaults(self, monkeypatch, no_env_file):
        """Test the defaults when nothing is set."""
        for name in ("SEED", "JOBS", "OUT", "TOLERANCE", "LOG_LEVEL", "MAX_STEPS"):
            monkeypatch.delenv(f"RENEWAL_{name}", raising=False)
        settings = Settings.from_env(no_env_file)
        assert settings == Settings()
        assert settings.tolerance is None

    def test_environment_values(self, monkeypatch, no_env_file):
        """Test that RENEWAL_* variables are read."""
        monkeypatch.setenv("RENEWAL_SEED", "42")
        monkeypatch.setenv("RENEWAL_JOBS", "4")
        monkeypatch.setenv("RENEWAL_TOLERANCE", "0.05")
        settings = Settings.from_env(no_env_file)
        assert (settings.seed, settings.jobs, settings.tolerance) == (42, 4, 0.05)

    def test_bad_environment_value(self, monkeypatch, no_env_file):
        """Test that an unparsable variable raises a config error."""
        monkeypatch.setenv("RENEWAL_JOBS", "many")
        with pytest.raises(ConfigError) as info:
            Settings.from_env(no_env_file)
        assert info.value.path == "env"

    def test_override_skips_none(self):
        """Test that only given flags replace settings."""
        settings = Settings(seed=1, jobs=2).override(seed=5, jobs=None, out="results")
        assert (settings.seed, settings.jobs, settings.out) == (5, 2, "results")


class TestInlineParsing:
    """Test suite for models, weights and windows given on the command line."""

    def test_model_from_json_string(self):
        """Test parsing a normal model from inline JSON."""
        model = config.parse_model('{"kind": "normal", "mean": 1.0, "sd": 0.5}')
        assert model.kind.value == "normal"
        assert model.param("mean") == 1.0

    def test_model_from_file(self, tmp_path):
        """Test parsing a lattice table from a JSON file."""
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"kind": "lattice_table", "table": {"-1": 0.25, "1": 0.75}}))
        model = config.parse_model(str(path))
        assert model.min_unit == -1 and model.max_unit == 1

    def test_invalid_model(self):
        """Test that an invalid parameter is reported under model."""
        with pytest.raises(ConfigError) as info:
            config.parse_model({"kind": "normal", "mean": 1.0, "sd": -1.0})
        assert info.value.path.startswith("model")

    def test_unreadable_model_path(self):
        """Test that a missing model file raises."""
        with pytest.raises(ConfigError, match="Cannot read"):
            config.parse_model("/nonexistent/model.json")

    def test_nested_weights(self):
        """Test exponentially modulated harmonic weights."""
        seq = config.parse_weights({"kind": "exp", "q": -0.1, "base": {"kind": "harmonic"}})
        assert isinstance(seq, ExpModulated)
        assert seq.base.gamma == -1.0

    def test_window(self):
        """Test parsing a power window and the absent window."""
        window = config.parse_window('{"kind": "power", "delta": 0.25}')
        assert window.kind == WindowKind.POWER
        assert window(100) == 3
        assert config.parse_window(None) is None
