"""Command-line interface for the compositor.

stdout carries JSON and CSV payloads only; logs go to stderr.
Exit codes: 0 success, 1 domain error, 2 usage error.
"""

import asyncio
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, List, Optional, Sequence

import click

from . import __version__
from .bench import bench_composition, bench_exposure
from .catalog import load_catalog, load_request_text
from .config import CompositorConfig, load_config
from .errors import CompositorError, RegistryUnreachableError
from .execution import DataflowMode, SimEnv, execute_plan, source_concepts
from .gateway import CompositionSystem, handle_request
from .lifecycle import managed_lifecycle
from .locking import ProcessLock
from .network import (
    RegistryClient,
    RegistryServer,
    RemoteRegistry,
    parse_address,
)
from .registry import Registry, RegistryLike
from .scenario import load_scenario, run_scenario
from .serialization import (
    canonical_json,
    load_json_document,
    parse_plan,
    parse_service,
)

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

mode_option = click.option(
    "--mode",
    type=click.Choice([m.value for m in DataflowMode]),
    default=DataflowMode.DECENTRALIZED.value,
    show_default=True,
)


class IntList(click.ParamType):
    """Comma-separated positive integers, e.g. ``10,50,100``."""

    name = "int-list"

    def convert(
        self,
        value: Any,
        param: Optional[click.Parameter],
        ctx: Optional[click.Context],
    ) -> List[int]:
        if isinstance(value, list):
            return value
        try:
            numbers = [int(part) for part in str(value).split(",") if part.strip()]
        except ValueError:
            self.fail(
                f"{value!r} is not a comma-separated list of integers", param, ctx
            )
        if not numbers:
            self.fail("at least one value is required", param, ctx)
        bad = [n for n in numbers if n <= 0]
        if bad:
            self.fail(f"values must be positive, got {bad}", param, ctx)
        return numbers


@dataclass
class CliState:
    config: CompositorConfig
    verbose: bool = False


def configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


def fail(ctx: click.Context, error: CompositorError) -> None:
    """Print the error document to stdout and exit with the domain-error code."""
    click.echo(canonical_json(error.to_dict()))
    ctx.exit(1)


@click.group(invoke_without_command=True)
@click.option(
    "--config", "config_path",
    type=click.Path(path_type=Path, dir_okay=False),
    default=None,
    help="YAML or JSON configuration file (COMPOSITOR_* variables override it)"
)
@click.option(
    "--verbose", "-v", is_flag=True, help="Enable verbose logging for debugging"
)
@click.option(
    "--print-config",
    is_flag=True,
    help="Print the effective configuration as JSON and exit",
)
@click.version_option(version=__version__, prog_name="compositor")
@click.pass_context
def cli(
    ctx: click.Context, config_path: Optional[Path], verbose: bool, print_config: bool
) -> None:
    """Dynamic service composition over replicated caches and synced registries."""
    configure_logging(verbose)
    try:
        config = load_config(config_path)
    except CompositorError as e:
        logger.error(f"Invalid configuration: {e.message}")
        fail(ctx, e)
        return
    ctx.obj = CliState(config, verbose)
    if print_config:
        click.echo(json.dumps(config.to_dict(), indent=2, sort_keys=True))
        ctx.exit(0)
    if ctx.invoked_subcommand is None:
        raise click.UsageError("missing command", ctx)


@cli.group()
def registry() -> None:
    """Run and talk to service registries."""


@registry.command("serve")
@click.option("--id", "registry_id", required=True, help="Registry id, e.g. R1")
@click.option(
    "--listen",
    default="127.0.0.1:7400",
    show_default=True,
    help="host:port to listen on",
)
@click.option(
    "--peers", default=None, help="Comma-separated host:port of peer registries"
)
@click.option(
    "--sync-interval",
    type=click.IntRange(min=0),
    default=None,
    help="Seconds between peer pulls",
)
@click.option(
    "--data-dir",
    type=click.Path(path_type=Path, file_okay=False),
    default=None,
    help="Directory for the catalog snapshot and the process lock",
)
@click.option(
    "--catalog", default=None, help="Initial catalog: builtin name (CAT-1) or file"
)
@click.option(
    "--compose/--no-compose", default=False, help="Also answer COMPOSE requests"
)
@click.option("--shutdown-timeout", default=30.0, type=float, show_default=True)
@click.pass_obj
def registry_serve(
    state: CliState,
    registry_id: str,
    listen: str,
    peers: Optional[str],
    sync_interval: Optional[int],
    data_dir: Optional[Path],
    catalog: Optional[str],
    compose: bool,
    shutdown_timeout: float,
) -> None:
    """Serve one registry over the framed protocol until SIGINT/SIGTERM."""
    ctx = click.get_current_context()
    config = state.config
    try:
        host, port = parse_address(listen)
        if peers:
            peer_list = [p.strip() for p in peers.split(",") if p.strip()]
        else:
            peer_list = list(config.registry_peers)
        for peer in peer_list:
            parse_address(peer)
        services = load_catalog(catalog) if catalog else []
    except CompositorError as e:
        fail(ctx, e)
        return
    except OSError as e:
        raise click.BadParameter(str(e), param_hint="--catalog")

    process_lock = None
    if data_dir is not None:
        process_lock = ProcessLock(data_dir, registry_id)
        if not process_lock.acquire():
            logger.error(
                f"Registry {registry_id} is already served from {data_dir}"
            )
            ctx.exit(1)

    try:
        interval = config.sync_interval_s if sync_interval is None else sync_interval
        asyncio.run(
            serve_registry(
                Registry(registry_id, services),
                config,
                host,
                port,
                peer_list,
                interval,
                data_dir,
                compose,
                shutdown_timeout,
                process_lock,
            )
        )
    except KeyboardInterrupt:
        logger.info("Registry shutdown requested")
    finally:
        if process_lock:
            process_lock.release()


async def serve_registry(
    registry: Registry,
    config: CompositorConfig,
    host: str,
    port: int,
    peers: Sequence[str],
    sync_interval: float,
    data_dir: Optional[Path],
    compose: bool,
    shutdown_timeout: float,
    process_lock: Optional[ProcessLock],
) -> None:
    system = CompositionSystem(config, [registry]) if compose else None
    server = RegistryServer(registry, system, config.max_frame_bytes)
    try:
        async with managed_lifecycle(
            registry,
            data_dir=data_dir,
            peers=peers,
            sync_interval=sync_interval,
            shutdown_timeout=shutdown_timeout,
            process_lock=process_lock,
        ) as manager:
            server.on_connection = manager.register_operation
            manager.register_cleanup_callback(server.stop_accepting)
            await server.start(host, port)
            health_status = await manager.check_health()
            if health_status["healthy"]:
                logger.info("Initial health check passed - registry ready")
            else:
                logger.warning(f"Health check issues: {health_status['issues']}")
            await manager.wait_for_shutdown()
    finally:
        # connection tasks are finished or cancelled once the lifecycle exits
        await server.stop()


@cli.command()
@click.option(
    "--file",
    "service_file",
    required=True,
    type=click.Path(path_type=Path, dir_okay=False, exists=True),
    help="Service description JSON",
)
@click.option("--registry", "address", required=True, help="Registry host:port")
@click.pass_obj
def register(state: CliState, service_file: Path, address: str) -> None:
    """Register a service description with a running registry."""
    ctx = click.get_current_context()
    max_frame_bytes = state.config.max_frame_bytes
    try:
        desc = parse_service(service_file.read_bytes())
        with RegistryClient(address, max_frame_bytes=max_frame_bytes) as client:
            version = client.register(desc)
    except CompositorError as e:
        fail(ctx, e)
        return
    except OSError as e:
        logger.error(f"Cannot reach registry {address}: {e}")
        fail(ctx, RegistryUnreachableError(address))
        return
    click.echo(canonical_json({"id": desc.id, "version": version, "registry": address}))


@cli.command()
@click.option(
    "--request",
    "request_source",
    required=True,
    help="Request JSON file or fixture name (R1, R2)",
)
@click.option(
    "--execute/--no-execute",
    default=False,
    help="Run the composed plan in the simulator",
)
@mode_option
@click.option(
    "--catalog",
    default="CAT-1",
    show_default=True,
    help="Local catalog: builtin name or file",
)
@click.option(
    "--registry",
    "registry_addresses",
    multiple=True,
    help="Remote registry host:port (repeatable)",
)
@click.option(
    "--warm/--cold", default=False, help="Pre-load the WSDB with the local catalog"
)
@click.option(
    "--remote",
    default=None,
    help="Send the request to a framed compose endpoint instead",
)
@click.pass_obj
def compose(
    state: CliState,
    request_source: str,
    execute: bool,
    mode: str,
    catalog: str,
    registry_addresses: Sequence[str],
    warm: bool,
    remote: Optional[str],
) -> None:
    """Compose services for a request and print the response JSON."""
    ctx = click.get_current_context()
    try:
        text = load_request_text(request_source)
    except OSError as e:
        raise click.BadParameter(str(e), param_hint="--request")

    if remote is not None:
        max_frame_bytes = state.config.max_frame_bytes
        try:
            with RegistryClient(remote, max_frame_bytes=max_frame_bytes) as client:
                response = client.compose(load_json_document(text))
        except CompositorError as e:
            fail(ctx, e)
            return
        except OSError as e:
            logger.error(f"Cannot reach compose endpoint {remote}: {e}")
            fail(ctx, RegistryUnreachableError(remote))
            return
        click.echo(canonical_json(response))
        ctx.exit(1 if "error" in response else 0)

    try:
        services = load_catalog(catalog)
    except CompositorError as e:
        fail(ctx, e)
        return
    except OSError as e:
        raise click.BadParameter(str(e), param_hint="--catalog")
    registries: List[RegistryLike] = [Registry("R1", services)]
    registries += [RemoteRegistry(address) for address in registry_addresses]
    system = CompositionSystem(state.config, registries)
    if warm:
        system.warm_cache(services)
    response_text, _ = handle_request(
        text, system, execute=execute, mode=DataflowMode(mode)
    )
    for registry_like in registries:
        if isinstance(registry_like, RemoteRegistry):
            registry_like.close()
    click.echo(response_text)
    if "error" in load_json_document(response_text):
        ctx.exit(1)


@cli.command("execute")
@click.option(
    "--plan",
    "plan_file",
    required=True,
    type=click.Path(path_type=Path, dir_okay=False, exists=True),
    help="Plan JSON as printed under 'plan' by compose",
)
@click.option(
    "--inputs",
    default=None,
    help="JSON object of input concept values (default: concept names)",
)
@mode_option
@click.option(
    "--fault", "faults", multiple=True, help="Service id to mark DOWN (repeatable)"
)
@click.pass_obj
def execute_command(
    state: CliState,
    plan_file: Path,
    inputs: Optional[str],
    mode: str,
    faults: Sequence[str],
) -> None:
    """Run a serialized plan in the dataflow simulator."""
    ctx = click.get_current_context()
    try:
        plan = parse_plan(plan_file.read_bytes())
        if inputs:
            values = load_json_document(inputs)
        else:
            values = {c: c for c in sorted(source_concepts(plan))}
        if not isinstance(values, dict):
            raise click.BadParameter("must be a JSON object", param_hint="--inputs")
        env = SimEnv(
            edge_cost_ms=state.config.latency.edge_cost_ms,
            coordinator_overhead_ms=state.config.latency.coordinator_overhead_ms,
            faults=set(faults),
        )
        result = execute_plan(plan, values, env, DataflowMode(mode))
    except CompositorError as e:
        fail(ctx, e)
        return
    click.echo(canonical_json(result.to_dict()))


@cli.group()
def bench() -> None:
    """Benchmark composition and exposure times (CSV on stdout)."""


@bench.command("compose")
@click.option(
    "--sizes",
    type=IntList(),
    default="10,50,100",
    show_default=True,
    help="Catalog sizes",
)
@click.option(
    "--seed", type=int, default=0, show_default=True, help="Catalog generator seed"
)
@click.pass_obj
def bench_compose(state: CliState, sizes: List[int], seed: int) -> None:
    """Composition time per catalog size."""
    click.echo(bench_composition(sizes, seed, state.config).to_csv(), nl=False)


@bench.command("expose")
@click.option(
    "--counts",
    type=IntList(),
    default="100,1000",
    show_default=True,
    help="Numbers of methods",
)
@click.option(
    "--seed", type=int, default=0, show_default=True, help="Service generator seed"
)
def bench_expose(counts: List[int], seed: int) -> None:
    """Exposure (registration) time per number of methods."""
    click.echo(bench_exposure(counts, seed).to_csv(), nl=False)


@cli.command()
@click.option(
    "--file",
    "scenario_file",
    required=True,
    type=click.Path(path_type=Path, dir_okay=False, exists=True),
    help="Scenario JSON or YAML",
)
@click.option("--catalog", default=None, help="Override the scenario's catalog")
@click.pass_obj
def scenario(state: CliState, scenario_file: Path, catalog: Optional[str]) -> None:
    """Run a scripted scenario, printing one JSON line per step."""
    ctx = click.get_current_context()
    try:
        outcomes = run_scenario(load_scenario(scenario_file), state.config, catalog)
    except CompositorError as e:
        logger.error(f"Scenario failed: {e.message}")
        fail(ctx, e)
        return
    for outcome in outcomes:
        click.echo(canonical_json(outcome.to_dict()))


@cli.command()
@click.option(
    "--catalog",
    default="CAT-1",
    show_default=True,
    help="Catalog of the first local registry",
)
@click.option(
    "--registries",
    default="R1",
    show_default=True,
    help="Comma-separated local registry ids",
)
@click.option("--warm/--cold", default=False, help="Pre-load the WSDB with the catalog")
@click.pass_obj
def mcp(state: CliState, catalog: str, registries: str, warm: bool) -> None:
    """Serve the composition tools over MCP (stdio)."""
    from .server import create_server

    ctx = click.get_current_context()
    try:
        services = load_catalog(catalog)
    except CompositorError as e:
        fail(ctx, e)
        return
    ids = [r.strip() for r in registries.split(",") if r.strip()] or ["R1"]
    system = CompositionSystem.from_catalog(services, state.config, ids, warm=warm)
    logger.info(f"Starting compositor MCP server over {len(services)} services")
    create_server(system).run()


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code instead of exiting."""
    args = list(argv) if argv is not None else None
    try:
        result = cli.main(args=args, prog_name="compositor", standalone_mode=False)
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    return result if isinstance(result, int) else 0


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
