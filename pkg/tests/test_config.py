"""Tests for configuration loading."""

import pytest

from compositor.config import CompositorConfig, load_config
from compositor.errors import ConfigError


class TestDefaults:
    """Test the built-in configuration."""

    def test_defaults(self):
        """Test documented default values."""
        config = load_config(environ={})
        assert config.wsdb_ttl_s == 300
        assert config.sync_interval_s == 60
        assert config.replica_count == 3
        assert config.limits.max_depth == 4
        assert config.limits.max_services == 6
        assert config.latency.edge_cost_ms == 5.0
        assert config.registry_peers == []

    def test_to_dict_is_json_safe(self):
        """Test the dump used by --print-config."""
        data = CompositorConfig().to_dict()
        assert data["limits"]["exhaustive"] is False
        assert data["replica_journal_dir"] is None


class TestFileOverrides:
    """Test YAML and JSON configuration files."""

    def test_yaml_file(self, temp_dir):
        """Test nested values from a YAML file."""
        path = temp_dir / "compositor.yaml"
        path.write_text("wsdb_ttl_s: 60\nlimits:\n  max_depth: 2\n")
        config = load_config(path, environ={})
        assert config.wsdb_ttl_s == 60
        assert config.limits.max_depth == 2
        assert config.limits.max_services == 6

    def test_json_file(self, temp_dir):
        """Test JSON is accepted as YAML."""
        path = temp_dir / "compositor.json"
        path.write_text('{"replica_count": 5}')
        assert load_config(path, environ={}).replica_count == 5

    def test_empty_file(self, temp_dir):
        """Test an empty file means all defaults."""
        path = temp_dir / "empty.yaml"
        path.write_text("")
        assert load_config(path, environ={}) == CompositorConfig()

    def test_missing_file(self, temp_dir):
        """Test a missing file is a configuration error."""
        with pytest.raises(ConfigError, match="not found"):
            load_config(temp_dir / "nope.yaml", environ={})

    def test_top_level_list(self, temp_dir):
        """Test the file must hold a mapping."""
        path = temp_dir / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(path, environ={})

    def test_unknown_key(self, temp_dir):
        """Test unknown keys name their path."""
        path = temp_dir / "bad.yaml"
        path.write_text("limits:\n  depth: 3\n")
        with pytest.raises(ConfigError) as exc_info:
            load_config(path, environ={})
        assert exc_info.value.key == "limits.depth"


class TestEnvironmentOverrides:
    """Test COMPOSITOR_* variables."""

    def test_env_beats_file(self, temp_dir):
        """Test environment values override the file."""
        path = temp_dir / "compositor.yaml"
        path.write_text("wsdb_ttl_s: 60\n")
        config = load_config(path, environ={"COMPOSITOR_WSDB_TTL_S": "120"})
        assert config.wsdb_ttl_s == 120

    def test_nested_env(self):
        """Test double underscores reach nested sections."""
        config = load_config(environ={
            "COMPOSITOR_LIMITS__EXHAUSTIVE": "true",
            "COMPOSITOR_LATENCY__EDGE_COST_MS": "2.5",
        })
        assert config.limits.exhaustive is True
        assert config.latency.edge_cost_ms == 2.5

    def test_peers_from_comma_list(self):
        """Test peers are split on commas."""
        config = load_config(environ={"COMPOSITOR_REGISTRY_PEERS": "127.0.0.1:7401, 127.0.0.1:7402"})
        assert config.registry_peers == ["127.0.0.1:7401", "127.0.0.1:7402"]

    def test_unrelated_variables_ignored(self):
        """Test variables without the prefix are ignored."""
        assert load_config(environ={"WSDB_TTL_S": "1"}).wsdb_ttl_s == 300

    def test_invalid_env_value(self):
        """Test a non-positive ttl from the environment is rejected with its key."""
        with pytest.raises(ConfigError) as exc_info:
            load_config(environ={"COMPOSITOR_WSDB_TTL_S": "0"})
        assert exc_info.value.key == "wsdb_ttl_s"
