"""Compositor MCP server - service composition tools for MCP clients."""

import logging
import time
from typing import Any, Dict, Optional

from fastmcp import Context, FastMCP
from pydantic import Field

from .errors import CompositorError
from .execution import DataflowMode
from .gateway import CompositionSystem, handle_document
from .registry import FindQuery
from .serialization import service_from_document, service_to_document

logger = logging.getLogger(__name__)


def _error(e: CompositorError) -> Dict[str, Any]:
    return {"status": "error", **e.to_dict()}


def _not_found(registry_id: Optional[str]) -> Dict[str, Any]:
    return {
        "status": "error",
        "error": "NOT_FOUND",
        "detail": {"registry": registry_id},
    }


def create_server(system: CompositionSystem) -> FastMCP:
    """Factory function to create the configured MCP server.

    Args:
        system: Composition system the tools operate on

    Returns:
        Configured FastMCP server instance
    """
    mcp = FastMCP("Compositor")

    @mcp.tool(
        description="Compose services for a request of provided and desired concepts",
        tags={"compose"},
    )
    async def compose(
        request: Dict[str, Any] = Field(
            description="Request document: provided, desired, weights, bounds, ..."
        ),
        execute: bool = Field(
            default=True, description="Run the composed plan in the simulator"
        ),
        mode: str = Field(
            default="decentralized",
            description="Dataflow mode: centralized or decentralized",
        ),
        ctx: Context = None,
    ) -> Dict[str, Any]:
        """Run one request through the full pipeline.

        Returns:
            The rendered response under ``response``; pipeline failures are
            reported with their error code
        """
        try:
            dataflow = DataflowMode(mode)
        except ValueError:
            return {
                "status": "error",
                "error": "VALIDATION",
                "detail": {"field": "mode", "value": mode},
            }
        if ctx:
            await ctx.info(f"Composing for desired concepts {request.get('desired')}")
        response, metrics = handle_document(
            request, system, execute=execute, mode=dataflow
        )
        if "error" in response:
            return {"status": "error", **response}
        return {
            "status": "success",
            "response": response,
            "trace": metrics.trace_names(),
        }

    @mcp.tool(
        description="Register or upgrade a service description in a local registry",
        tags={"registry"},
    )
    async def register_service(
        service: Dict[str, Any] = Field(description="Service description document"),
        registry_id: Optional[str] = Field(
            default=None, description="Target registry (default: the first)"
        ),
        ctx: Context = None,
    ) -> Dict[str, Any]:
        try:
            desc = service_from_document(service)
            registries = system.local_registries
            if not registries:
                return _not_found(registry_id)
            if registry_id is None:
                registry = registries[0]
            else:
                try:
                    registry = system.registry(registry_id)
                except KeyError:
                    return _not_found(registry_id)
            started = time.perf_counter()
            stored = registry.register(desc)
            system.metrics.record_exposure((time.perf_counter() - started) * 1000.0)
            if ctx:
                where = registry.registry_id
                await ctx.info(f"Registered {stored.id} v{stored.version} at {where}")
            return {
                "status": "success",
                "id": stored.id,
                "version": stored.version,
                "registry_id": registry.registry_id,
            }
        except CompositorError as e:
            logger.info(f"register_service rejected: {e.message}")
            return _error(e)

    @mcp.tool(
        description=(
            "Find services in every local registry by output concept, "
            "category prefix or id"
        ),
        tags={"registry"},
    )
    async def find_services(
        output_concept: Optional[str] = Field(
            default=None, description="Concept the service must produce"
        ),
        category_prefix: Optional[str] = Field(
            default=None, description="Category path prefix, e.g. travel/booking"
        ),
        service_id: Optional[str] = Field(
            default=None, description="Exact service id"
        ),
        ctx: Context = None,
    ) -> Dict[str, Any]:
        try:
            query = FindQuery(output_concept, category_prefix, service_id)
            results: Dict[str, Any] = {}
            for registry in system.local_registries:
                found = registry.find(query)
                results[registry.registry_id] = [service_to_document(s) for s in found]
            return {"status": "success", "query": query.as_dict(), "results": results}
        except CompositorError as e:
            return _error(e)

    @mcp.tool(
        description=(
            "Advance the simulated clock, running registry sync rounds that fall due"
        ),
        tags={"clock"},
    )
    async def advance_clock(
        seconds: int = Field(ge=0, description="Simulated seconds to advance"),
        ctx: Context = None,
    ) -> Dict[str, Any]:
        now = system.advance(seconds)
        return {"status": "success", "now": now, "next_sync_at": system.next_sync_at}

    @mcp.tool(
        description="Mark a service, WSDB replica or registry as down or back up",
        tags={"faults"},
    )
    async def set_fault(
        target: str = Field(description="service:<id>, replica:<n> or registry:<id>"),
        down: bool = Field(
            default=True, description="True to fail the target, False to heal it"
        ),
        ctx: Context = None,
    ) -> Dict[str, Any]:
        try:
            system.set_fault(target, down)
        except CompositorError as e:
            return _error(e)
        return {"status": "success", "target": target, "down": down}

    @mcp.tool(
        description="Aggregated request counters and per-replica usage",
        tags={"metrics"},
    )
    async def get_metrics(ctx: Context = None) -> Dict[str, Any]:
        health = system.replica_set.health()
        return {
            "status": "success",
            "now": system.now(),
            "metrics": system.metrics.snapshot(),
            "replicas": {name: state.value for name, state in health.items()},
        }

    return mcp
