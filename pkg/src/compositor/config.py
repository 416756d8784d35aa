"""Configuration management for the compositor.

Effective configuration = defaults, overridden by a YAML/JSON file, overridden
by ``COMPOSITOR_*`` environment variables. Nested keys use ``__`` in variable
names, e.g. ``COMPOSITOR_LIMITS__MAX_DEPTH=3``.
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError
from .matchmaker import SearchLimits
from .model import DEFAULT_THROUGHPUT_MAX_RPS

logger = logging.getLogger(__name__)

ENV_PREFIX = "COMPOSITOR_"
RAW_ENV_KEYS = {"registry_peers"}


class LatencyModel(BaseModel):
    """Transfer-cost constants of the execution simulator."""

    model_config = ConfigDict(extra="forbid")

    edge_cost_ms: float = Field(
        default=5.0, ge=0, description="Cost of one data transfer hop"
    )
    coordinator_overhead_ms: float = Field(
        default=0.0,
        ge=0,
        description="Extra cost per message relayed by the coordinator",
    )


class CompositorConfig(BaseModel):
    """Compositor configuration structure."""

    model_config = ConfigDict(extra="forbid")

    wsdb_ttl_s: int = Field(
        default=300, gt=0, description="Aging factor of WSDB entries"
    )
    sync_interval_s: int = Field(default=60, gt=0, description="Registry sync period")
    replica_count: int = Field(default=3, gt=0, description="Number of WSDB replicas")
    limits: SearchLimits = Field(default_factory=SearchLimits)
    latency: LatencyModel = Field(default_factory=LatencyModel)
    registry_peers: List[str] = Field(
        default_factory=list, description="host:port of peer registries"
    )
    throughput_max_rps: float = Field(
        default=DEFAULT_THROUGHPUT_MAX_RPS,
        gt=0,
        description="Throughput reported for the empty plan",
    )
    max_frame_bytes: int = Field(
        default=1 << 20, gt=0, description="Largest accepted frame body"
    )
    replica_journal_dir: Optional[Path] = Field(
        default=None, description="Directory for WSDB replica journals"
    )

    @field_validator("registry_peers", mode="before")
    @classmethod
    def _split_peers(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [peer.strip() for peer in value.split(",") if peer.strip()]
        return value

    def to_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def _read_file(path: Path) -> Dict[str, Any]:
    try:
        with path.open('r', encoding='utf-8') as f:
            content = yaml.safe_load(f)
    except FileNotFoundError:
        raise ConfigError(str(path), "configuration file not found")
    except yaml.YAMLError as e:
        raise ConfigError(str(path), f"cannot parse configuration: {e}")
    if content is None:
        return {}
    if not isinstance(content, dict):
        raise ConfigError(str(path), "top level must be a mapping")
    logger.debug(f"Loaded configuration from {path}")
    return content


def _env_value(key: str, raw: str) -> Any:
    if key in RAW_ENV_KEYS:
        return raw
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def _apply_env(data: Dict[str, Any], environ: Mapping[str, str]) -> None:
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        target = data
        for part in path[:-1]:
            nested = target.setdefault(part, {})
            if not isinstance(nested, dict):
                raise ConfigError(".".join(path), "cannot nest under a scalar value")
            target = nested
        target[path[-1]] = _env_value(path[-1], raw)
        logger.debug(f"Environment override {name}")


def load_config(
    path: Optional[Path] = None, environ: Optional[Mapping[str, str]] = None
) -> CompositorConfig:
    """Load the effective configuration.

    Args:
        path: Optional YAML or JSON file; an empty file means all defaults
        environ: Environment to read overrides from (defaults to ``os.environ``)

    Returns:
        Validated configuration

    Raises:
        ConfigError: With the dotted key path of the first offending value
    """
    data = _read_file(path) if path is not None else {}
    _apply_env(data, os.environ if environ is None else environ)
    try:
        return CompositorConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or "<root>"
        raise ConfigError(key, first["msg"]) from e
