import json

import pytest

from src.commands import parse_set_options, write_manifest
from src.config import __version__, build_config, load_config
from src.errors import ConfigurationError


class TestBuildConfig:
    """Tests for configuration defaults and validation"""

    def test_defaults(self):
        """Test the documented default values"""
        config = build_config()
        assert config.method == "boosted-st"
        assert (config.alpha, config.beta, config.gamma) == (0.7, 1.3, 5000.0)
        assert config.batch_seconds == 60.0
        assert config.k == 3
        assert config.region.e == 10
        assert config.region_seconds == config.batch_seconds
        assert config.spring.epsilon is None
        assert config.tol_ms == 100.0

    def test_region_length_override(self):
        """Test that an explicit region length replaces the batch default"""
        assert build_config({"region__u_seconds": "120"}).region_seconds == 120.0

    def test_alpha_must_be_below_beta(self):
        """Test that an inverted search window is rejected"""
        with pytest.raises(ConfigurationError):
            build_config({"alpha": 1.2, "beta": 1.1})

    @pytest.mark.parametrize("alpha, beta", [(1.0, 1.3), (0.7, 1.0)])
    def test_window_must_contain_cycle_length(self, alpha, beta):
        """Test that l_x must lie strictly inside the window"""
        with pytest.raises(ConfigurationError):
            build_config({"alpha": alpha, "beta": beta})

    def test_error_names_field(self):
        """Test that validation errors carry the offending field"""
        with pytest.raises(ConfigurationError) as exc_info:
            build_config({"k": 0})
        assert exc_info.value.field == "k"

    def test_nested_field_name(self):
        """Test that nested errors are reported with a dotted path"""
        with pytest.raises(ConfigurationError) as exc_info:
            build_config({"region__e": 0})
        assert exc_info.value.field == "region.e"

    def test_unknown_key_rejected(self):
        """Test that typos are not silently ignored"""
        with pytest.raises(ConfigurationError):
            build_config({"gama": 10})

    def test_odd_filter_order(self):
        """Test that the bandpass order must be even"""
        with pytest.raises(ConfigurationError):
            build_config({"filter_order": 5})

    def test_dot_and_double_underscore_nesting(self):
        """Test both section separators"""
        config = build_config({"spring.epsilon": "0.4", "threshold__peak_fraction": "0.5"})
        assert config.spring.epsilon == 0.4
        assert config.threshold.peak_fraction == 0.5

    def test_later_layers_win(self):
        """Test layer precedence"""
        assert build_config({"gamma": 100}, {"gamma": 200}).gamma == 200.0

    def test_none_values_ignored(self):
        """Test that unset CLI flags keep lower layers"""
        assert build_config({"gamma": 100}, {"gamma": None}).gamma == 100.0

    def test_synth_lists_from_strings(self):
        """Test comma-separated heart rate profiles"""
        config = build_config({"synth__hr_profile_bpm": "60, 90"})
        assert config.synth.hr_profile_bpm == [60.0, 90.0]

    def test_synth_heart_rate_range(self):
        """Test that synthetic heart rates outside [40, 180] are rejected"""
        with pytest.raises(ConfigurationError):
            build_config({"synth__hr_profile_bpm": "200"})

    def test_section_given_a_scalar(self):
        """Test that a section cannot be assigned a value and a subkey"""
        with pytest.raises(ConfigurationError):
            build_config({"region": "5", "region__e": "3"})


class TestLoadConfig:
    """Tests for layered configuration loading"""

    def test_environment_prefix(self):
        """Test that PULSE_DTW_* variables are applied"""
        config = load_config(environ={"PULSE_DTW_K": "5", "PULSE_DTW_SPRING__EPSILON": "0.3", "OTHER_K": "9"})
        assert config.k == 5
        assert config.spring.epsilon == 0.3

    def test_config_file(self, temp_dir):
        """Test a key=value file"""
        path = temp_dir / "run.env"
        path.write_text("method=spring\nbatch_seconds=30\n")
        config = load_config(str(path), environ={})
        assert config.method == "spring"
        assert config.batch_seconds == 30.0

    def test_precedence(self, temp_dir):
        """Test file < environment < overrides"""
        path = temp_dir / "run.env"
        path.write_text("gamma=1\nk=2\nalpha=0.6\n")
        config = load_config(str(path), overrides={"gamma": 3}, environ={"PULSE_DTW_GAMMA": "2", "PULSE_DTW_K": "4"})
        assert (config.gamma, config.k, config.alpha) == (3.0, 4, 0.6)

    def test_missing_config_file(self, temp_dir):
        """Test that an absent config file is a configuration error"""
        with pytest.raises(ConfigurationError) as exc_info:
            load_config(str(temp_dir / "absent.env"), environ={})
        assert exc_info.value.field == "config"


class TestSetOptions:
    """Tests for --set parsing"""

    def test_pairs(self):
        """Test KEY=VALUE splitting"""
        assert parse_set_options(["k=2", " spring.epsilon = 0.1 "]) == {"k": "2", "spring.epsilon": "0.1"}

    def test_none(self):
        """Test that no flags give no overrides"""
        assert parse_set_options(None) == {}

    def test_missing_separator(self):
        """Test that a pair without '=' is rejected"""
        with pytest.raises(ConfigurationError) as exc_info:
            parse_set_options(["k2"])
        assert exc_info.value.field == "set"


class TestManifest:
    """Tests for the run manifest"""

    def test_written_with_config(self, run_config, temp_dir):
        """Test manifest contents"""
        path = write_manifest(run_config, "segment", {"argv": ["segment"]})
        manifest = json.loads(path.read_text())
        assert path == temp_dir / "manifest.json"
        assert manifest["version"] == __version__
        assert manifest["command"] == "segment"
        assert manifest["config"]["alpha"] == 0.7
        assert manifest["argv"] == ["segment"]
