"""Shared fixtures for compositor tests."""

import shutil
import tempfile
from pathlib import Path
from typing import Iterable

import pytest

from compositor.catalog import load_catalog
from compositor.config import CompositorConfig
from compositor.gateway import CompositionSystem
from compositor.model import (
    FunctionalitySpec,
    QoSVector,
    Request,
    ServiceDescription,
)
from compositor.server import create_server


class DirectTestClient:
    """Direct tool access for fast unit testing."""

    def __init__(self, server):
        self.server = server

    async def call_tool(self, tool_name, **kwargs):
        """Call tool function directly."""
        tool = await self.server.get_tool(tool_name)
        if not tool:
            raise ValueError(f"Tool {tool_name} not found in server")
        if hasattr(tool, 'fn'):
            func = tool.fn
        elif hasattr(tool, 'func'):
            func = tool.func
        else:
            raise ValueError(f"Cannot access callable from tool {tool_name}, tool type: {type(tool)}")
        return await func(**kwargs)


def make_service(
    service_id: str,
    inputs: Iterable[str] = (),
    outputs: Iterable[str] = ("X",),
    response_time_ms: float = 10.0,
    cost: float = 1.0,
    availability: float = 0.99,
    reliability: float = 0.99,
    throughput_rps: float = 100.0,
    category: str = "demo/convert",
    attributes: dict | None = None,
    version: int = 1,
) -> ServiceDescription:
    """Build a valid service description with overridable fields."""
    return ServiceDescription(
        id=service_id,
        name=f"service {service_id}",
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        functionality=FunctionalitySpec(category, tuple((attributes or {}).items())),
        qos=QoSVector(response_time_ms, cost, availability, reliability, throughput_rps),
        endpoint=f"sim://{service_id.lower()}",
        version=version,
    )


def service_document(service_id: str = "S9", inputs=("A",), outputs=("Z",), version: int = 1) -> dict:
    """A service description as it appears on the wire."""
    return {
        "id": service_id,
        "name": f"service {service_id}",
        "inputs": list(inputs),
        "outputs": list(outputs),
        "functionality": {"category": "demo/convert", "attributes": {"price": 5, "region": "eu"}},
        "qos": {
            "response_time_ms": 5,
            "cost": 0.5,
            "availability": 0.99,
            "reliability": 0.99,
            "throughput_rps": 200,
        },
        "endpoint": f"sim://{service_id.lower()}",
        "version": version,
    }


@pytest.fixture
def temp_dir():
    """Temporary directory removed after the test."""
    tmpdir = tempfile.mkdtemp()
    yield Path(tmpdir)
    shutil.rmtree(tmpdir, ignore_errors=True)


@pytest.fixture
def cat1():
    """The CAT-1 catalog: S1 A→B, S2 B→C, S3 A→C, S4 A→D."""
    return load_catalog("CAT-1")


@pytest.fixture
def cat1_by_id(cat1):
    """CAT-1 keyed by service id."""
    return {service.id: service for service in cat1}


@pytest.fixture
def r1():
    """Request R1: provided {A}, desired {C}, response time only."""
    return Request(
        provided=frozenset({"A"}),
        desired=frozenset({"C"}),
        weights={"response_time_ms": 1.0},
    )


@pytest.fixture
def r2():
    """Request R2: provided {A}, desired {C, D}, response time only."""
    return Request(
        provided=frozenset({"A"}),
        desired=frozenset({"C", "D"}),
        weights={"response_time_ms": 1.0},
    )


@pytest.fixture
def config():
    """Default configuration."""
    return CompositorConfig()


@pytest.fixture
def system(cat1, config):
    """Cold system: CAT-1 in registry R1, empty WSDB, clock at 0."""
    return CompositionSystem.from_catalog(cat1, config)


@pytest.fixture
def warm_system(cat1, config):
    """System whose three replicas already hold CAT-1."""
    return CompositionSystem.from_catalog(cat1, config, warm=True)


@pytest.fixture
def test_server(warm_system):
    """MCP server over a warm CAT-1 system."""
    return create_server(warm_system)


@pytest.fixture
def test_client(test_server):
    """Create test client for MCP server."""
    return DirectTestClient(test_server)


@pytest.fixture
def cli_runner():
    """Create Click CLI runner for testing."""
    from click.testing import CliRunner
    return CliRunner()
