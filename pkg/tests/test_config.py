"""Tests for experiment configuration and process settings"""

from pathlib import Path
from unittest.mock import patch

import pytest
from pydantic import ValidationError

from illusion_guard.core.config import DEFAULT_OUTPUT_DIR, Settings
from illusion_guard.core.exceptions import ConfigurationError
from illusion_guard.schemas.config import (
    DEFAULT_SEED,
    AttackCostSettings,
    ExperimentConfig,
    config_hash,
)
from illusion_guard.services.config_service import (
    EFFECTIVE_CONFIG_FILE,
    dump_config,
    load_config,
    parse_config,
    write_effective_config,
)


class TestExperimentConfig:
    """Test experiment configuration validation"""

    def test_defaults(self):
        """Test that an empty mapping gives the desk-scale defaults"""
        cfg = parse_config({})
        assert cfg.seed == DEFAULT_SEED
        assert cfg.data.num_classes == 20
        assert cfg.data.height == cfg.data.width == 16
        assert cfg.data.embed_dim == 64
        assert cfg.pca_rank == 24
        assert cfg.consensus.num_samples == 10
        assert cfg.attack.linf_budget == 0.1
        assert cfg.attack.alpha == pytest.approx(0.01)
        assert cfg.reconstructors["vae"].latent_noise_std == 0.15
        assert cfg.reconstructors["dm"].noise_level == 0.3
        assert cfg.reconstructors["dm"].reverse_steps == 30

    def test_seed_propagates(self):
        """Test that a seed-only config seeds every sub-stream"""
        cfg = parse_config({"seed": 3})
        assert cfg.data.master_seed == 3
        assert cfg.attack.seed == 3
        assert cfg.consensus.seed == 3

    def test_explicit_sub_seed_is_kept(self):
        """Test that a sub-config seed set in the file is not overwritten"""
        cfg = parse_config({"seed": 3, "consensus": {"seed": 99}})
        assert cfg.consensus.seed == 99
        assert cfg.attack.seed == 3

    def test_zero_samples_names_the_field(self):
        """Test that N = 0 is rejected with the offending field path"""
        with pytest.raises(ConfigurationError) as exc_info:
            parse_config({"consensus": {"num_samples": 0}})
        fields = [error["field"] for error in exc_info.value.details["errors"]]
        assert "consensus -> num_samples" in fields

    @pytest.mark.parametrize(
        "raw",
        [
            {"unknown_key": 1},
            {"attack": {"linf_budget": -0.1}},
            {"attack": {"cos_threshold": 1.5}},
            {"reconstructors": {"dm": {"kind": "dm", "noise_level": 0.0}}},
            {"data": {"height": 2, "width": 2, "embed_dim": 8}},
            {"pca_rank": 300},
            {"sweep": {"n_values": [0, 3]}},
        ],
    )
    def test_invalid_values(self, raw):
        """Test invariant violations and unknown keys"""
        with pytest.raises(ConfigurationError):
            parse_config(raw)

    def test_unknown_sanitizer_reference(self):
        """Test that sampling sanitizers must exist in the roster"""
        with pytest.raises(ConfigurationError, match="unknown reconstructor"):
            parse_config({"consensus": {"sampling_sanitizers": ["gan"]}})

    def test_sanitizer_kind_mismatch(self):
        """Test that baselines must be pixel transforms"""
        with pytest.raises(ConfigurationError, match="expected one of transform"):
            parse_config({"baselines": ["vae"]})

    def test_boundary_values_accepted(self):
        """Test s = 0, epsilon = 0 and threshold -1"""
        cfg = parse_config(
            {
                "data": {"pixel_noise_std": 0.0},
                "attack": {"linf_budget": 0.0, "cos_threshold": -1.0},
            }
        )
        assert cfg.data.pixel_noise_std == 0.0
        assert cfg.attack.alpha == 0.0

    def test_sweep_values_sorted(self):
        """Test that sweep counts are deduplicated and sorted"""
        assert parse_config({"sweep": {"n_values": [5, 1, 5, 3]}}).sweep.n_values == [1, 3, 5]

    def test_overrides(self):
        """Test command-line seed and thread overrides"""
        cfg = parse_config({"seed": 1}, seed=5, threads=3)
        assert cfg.seed == 5
        assert cfg.data.master_seed == 5
        assert cfg.threads == 3


class TestConfigHash:
    """Test the result-determining configuration hash"""

    def test_ignores_threads_and_output(self):
        """Test that thread count and output directory do not change the hash"""
        base = parse_config({"seed": 2})
        other = base.model_copy(update={"threads": 8, "output_dir": Path("/tmp/x")})
        assert config_hash(base) == config_hash(other)

    def test_parameters_change_hash(self):
        """Test that a result-determining parameter changes the hash"""
        assert config_hash(parse_config({"seed": 2})) != config_hash(parse_config({"seed": 3}))


class TestConfigFiles:
    """Test YAML loading and echoing"""

    def test_round_trip(self, tmp_path, make_experiment):
        """Test that the echoed effective config loads back to the same config"""
        cfg = ExperimentConfig.model_validate(make_experiment())
        path = write_effective_config(cfg, tmp_path)
        assert path.name == EFFECTIVE_CONFIG_FILE
        assert load_config(path) == cfg

    def test_dump_is_sorted_yaml(self):
        """Test that the echo spells out defaults"""
        text = dump_config(parse_config({}))
        assert "num_samples: 10" in text
        assert "latent_noise_std: 0.15" in text

    def test_empty_file_gives_defaults(self, tmp_path):
        """Test an empty YAML file"""
        path = tmp_path / "empty.yaml"
        path.write_text("", encoding="utf-8")
        assert load_config(path) == parse_config({})

    def test_missing_file(self, tmp_path):
        """Test a config path that does not exist"""
        with pytest.raises(ConfigurationError, match="does not exist"):
            load_config(tmp_path / "missing.yaml")

    def test_malformed_yaml(self, tmp_path):
        """Test a YAML syntax error"""
        path = tmp_path / "bad.yaml"
        path.write_text("seed: [1, 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="cannot parse"):
            load_config(path)

    def test_non_mapping(self, tmp_path):
        """Test a YAML list at the top level"""
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n- 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError, match="mapping"):
            load_config(path)

    def test_shipped_configs_load(self):
        """Test the example configuration files"""
        root = Path(__file__).resolve().parents[1] / "configs"
        for path in sorted(root.glob("*.yaml")):
            assert isinstance(load_config(path), ExperimentConfig)


class TestSettings:
    """Test process settings"""

    def test_default_output_dir(self):
        """Test the fallback output directory"""
        with patch.dict("os.environ", {}, clear=True):
            settings = Settings()
        assert settings.resolve_output_dir(None, None) == DEFAULT_OUTPUT_DIR

    def test_output_dir_precedence(self):
        """Test command line over environment over config file"""
        with patch.dict("os.environ", {"ILLUSION_GUARD_OUTPUT_DIR": "/env"}, clear=True):
            settings = Settings()
        assert settings.resolve_output_dir(Path("/cli"), Path("/cfg")) == Path("/cli")
        assert settings.resolve_output_dir(None, Path("/cfg")) == Path("/env")

    def test_config_file_output_dir(self):
        """Test that the config file is used when nothing overrides it"""
        with patch.dict("os.environ", {}, clear=True):
            settings = Settings()
        assert settings.resolve_output_dir(None, Path("/cfg")) == Path("/cfg")

    def test_log_level_validation(self):
        """Test that log levels are normalized and checked"""
        with patch.dict("os.environ", {"ILLUSION_GUARD_LOG_LEVEL": "debug"}, clear=True):
            assert Settings().log_level == "DEBUG"
        with patch.dict("os.environ", {"ILLUSION_GUARD_LOG_LEVEL": "LOUD"}, clear=True):
            with pytest.raises(ValueError):
                Settings()

    def test_only_process_fields(self):
        """Test that settings hold nothing beyond logging and the output directory"""
        assert set(Settings.model_fields) == {"debug", "log_level", "output_dir"}


class TestDefenseArms:
    """Test which sanitizers the experiments defend with"""

    def test_default_arms(self):
        """Test that cost and transfer run through the diffusion purifier"""
        cfg = parse_config({})
        assert cfg.attack_cost.sanitizer == "dm"
        assert cfg.transfer.sanitizer == "dm"
        assert cfg.calibration.sanitizer == "vae"
        assert cfg.sweep.sanitizers[0] == "dm"

    def test_desk_config_arms(self):
        """Test the shipped desk-scale file uses the same arms"""
        path = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"
        cfg = load_config(path)
        assert cfg.attack_cost.sanitizer == "dm"
        assert cfg.transfer.sanitizer == "dm"
        assert cfg.calibration.enabled
        assert cfg.consensus.num_samples == 10


class TestBaseSchema:
    """Test the shared schema behavior"""

    def test_frozen_and_strict(self):
        """Test that unknown keys are rejected and fields cannot be reassigned"""
        with pytest.raises(ValidationError):
            AttackCostSettings(sanitizer="dm", bins=3)
        settings = AttackCostSettings()
        with pytest.raises(ValidationError):
            settings.sanitizer = "vae"
