"""Lifecycle of a served registry.

Loads the catalog snapshot at start, keeps it on disk after every change,
pulls peers on a fixed interval, and shuts down gracefully on SIGINT/SIGTERM:
listeners close first, then sync rounds and open connections get
``shutdown_timeout`` seconds to finish.
"""

import asyncio
import logging
import os
import signal
import time
from contextlib import asynccontextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, AsyncIterator, Callable, Dict, List, Optional, Sequence

from .atomic_ops import atomic_write_json, read_json
from .errors import CompositorError
from .locking import ProcessLock
from .network import pull_state
from .registry import Registry, RegistryState, state_from_document, state_to_document

logger = logging.getLogger(__name__)


def snapshot_path(data_dir: Path, registry_id: str) -> Path:
    return data_dir / f"catalog-{registry_id}.json"


class LifecycleManager:
    """Owns the background sync task, snapshots, signals and shutdown of one registry.

    Args:
        registry: The registry being served
        data_dir: Directory for ``catalog-<id>.json``; no persistence when None
        peers: ``host:port`` addresses pulled every ``sync_interval`` seconds
        sync_interval: Seconds between sync rounds (0 disables the task)
        shutdown_timeout: Max seconds to wait for pending operations
        process_lock: Lock released on shutdown and refreshed every round
    """

    def __init__(
        self,
        registry: Registry,
        data_dir: Optional[Path] = None,
        peers: Sequence[str] = (),
        sync_interval: float = 60.0,
        shutdown_timeout: float = 30.0,
        process_lock: Optional[ProcessLock] = None,
    ) -> None:
        self.registry = registry
        self.data_dir = data_dir
        self.peers = list(peers)
        self.sync_interval = sync_interval
        self.shutdown_timeout = shutdown_timeout
        self.process_lock = process_lock

        self.is_running = False
        self.shutdown_requested = False
        self.pending_operations: List[asyncio.Task] = []
        self.sync_task: Optional[asyncio.Task] = None
        self.cleanup_callbacks: List[Callable[[], None]] = []
        self.unreachable_peers: List[str] = []
        self.sync_rounds = 0
        self._stopped = asyncio.Event()
        self._signal_handlers_registered = False

    @property
    def snapshot_file(self) -> Optional[Path]:
        if self.data_dir is None:
            return None
        return snapshot_path(self.data_dir, self.registry.registry_id)

    def register_signal_handlers(self) -> None:
        if self._signal_handlers_registered:
            return
        loop = asyncio.get_running_loop()

        def signal_handler(signum: int, frame: Any = None) -> None:
            logger.info(f"Received signal {signum}, initiating graceful shutdown")
            self.shutdown_requested = True
            loop.call_soon_threadsafe(lambda: asyncio.ensure_future(self.shutdown()))

        signal.signal(signal.SIGINT, signal_handler)
        signal.signal(signal.SIGTERM, signal_handler)
        self._signal_handlers_registered = True
        logger.debug("Signal handlers registered for graceful shutdown")

    def load_snapshot(self) -> bool:
        """Replace the registry state with the snapshot on disk, if any.

        Returns:
            True if a snapshot was loaded
        """
        path = self.snapshot_file
        if path is None or not path.exists():
            return False
        try:
            state = state_from_document(read_json(path))
        except (CompositorError, ValueError, OSError) as e:
            logger.error(f"Ignoring unreadable snapshot {path}: {e}")
            return False
        self.registry.load(state)
        logger.info(f"Loaded {len(state.catalog)} services from {path}")
        return True

    def save_snapshot(self, state: Optional[RegistryState] = None) -> None:
        path = self.snapshot_file
        if path is None:
            return
        atomic_write_json(path, state_to_document(state or self.registry.state))
        logger.debug(f"Snapshot written to {path}")

    async def start(self) -> None:
        if self.is_running:
            return

        logger.info(
            f"Starting lifecycle manager for registry {self.registry.registry_id}"
        )
        self.is_running = True
        self.shutdown_requested = False
        self._stopped.clear()

        self.register_signal_handlers()

        if self.data_dir is not None:
            self.data_dir.mkdir(parents=True, exist_ok=True)
            self.load_snapshot()
            self.registry.on_change = self.save_snapshot

        health_status = await self.check_health()
        if not health_status["healthy"]:
            logger.warning(f"Initial health check failed: {health_status['issues']}")

        if self.sync_interval > 0 and self.peers:
            self.sync_task = asyncio.create_task(self._sync_loop())
            logger.debug(
                f"Peer sync started (interval: {self.sync_interval}s, "
                f"peers: {self.peers})"
            )

    async def shutdown(self) -> None:
        if not self.is_running:
            return

        logger.info("Beginning graceful shutdown")
        self.is_running = False
        self.shutdown_requested = True

        try:
            if self.sync_task and not self.sync_task.done():
                self.sync_task.cancel()
                try:
                    await asyncio.wait_for(self.sync_task, timeout=5.0)
                except (asyncio.CancelledError, asyncio.TimeoutError):
                    pass

            # listeners close before in-flight work drains
            self.cleanup_resources()

            await self.complete_pending_operations()

            if self.data_dir is not None:
                self.registry.on_change = None
                self.save_snapshot()

            if self.process_lock:
                self.process_lock.release()

            logger.info("Graceful shutdown completed")
        finally:
            self._stopped.set()

    async def wait_for_shutdown(self) -> None:
        await self._stopped.wait()

    async def sync_once(self) -> int:
        """Pull every peer once, pushing the local state in the same exchange.

        Returns:
            Number of peers that answered
        """
        reached = 0
        unreachable = []
        for peer in self.peers:
            try:
                state = await pull_state(peer, push=self.registry.state)
            except CompositorError as e:
                unreachable.append(peer)
                logger.warning(f"Sync with {peer} failed: {e.message}")
                continue
            self.registry.pull_from(state, now=int(time.time()))
            reached += 1
        self.unreachable_peers = unreachable
        self.sync_rounds += 1
        if self.process_lock:
            self.process_lock.refresh()
        return reached

    async def check_health(self) -> Dict[str, Any]:
        issues = []

        if self.data_dir is not None:
            if not self.data_dir.is_dir():
                issues.append(f"Data directory does not exist: {self.data_dir}")
            elif not os.access(self.data_dir, os.R_OK | os.W_OK):
                issues.append(
                    f"No read/write access to data directory: {self.data_dir}"
                )

        if self.process_lock and not self.process_lock.acquired:
            issues.append(f"Registry lock not held: {self.process_lock.lock_file}")
        if not self.registry.available:
            issues.append(f"Registry {self.registry.registry_id} is marked unavailable")
        if self.unreachable_peers:
            issues.append(f"Unreachable peers: {', '.join(self.unreachable_peers)}")

        return {
            "healthy": not issues,
            "issues": issues,
            "timestamp": datetime.now().isoformat(),
            "registry_id": self.registry.registry_id,
            "services": len(self.registry.state.catalog),
            "sync_rounds": self.sync_rounds,
        }

    async def complete_pending_operations(self) -> None:
        if not self.pending_operations:
            return

        logger.info(
            f"Waiting for {len(self.pending_operations)} pending operations to complete"
        )
        try:
            await asyncio.wait_for(
                asyncio.gather(*self.pending_operations, return_exceptions=True),
                timeout=self.shutdown_timeout,
            )
        except asyncio.TimeoutError:
            logger.warning(
                "Timeout waiting for operations - cancelling "
                f"{len(self.pending_operations)} tasks"
            )
            for task in self.pending_operations:
                if not task.done():
                    task.cancel()
        finally:
            self.pending_operations.clear()

    def cleanup_resources(self) -> None:
        for callback in self.cleanup_callbacks:
            try:
                callback()
            except Exception as e:
                logger.warning(f"Error in cleanup callback: {e}")
        self.cleanup_callbacks.clear()

    def register_operation(self, task: asyncio.Task) -> None:
        self.pending_operations = [t for t in self.pending_operations if not t.done()]
        self.pending_operations.append(task)

    def register_cleanup_callback(self, callback: Callable[[], None]) -> None:
        self.cleanup_callbacks.append(callback)

    async def _sync_loop(self) -> None:
        consecutive_failures = 0
        try:
            while self.is_running and not self.shutdown_requested:
                await asyncio.sleep(self.sync_interval)
                if self.shutdown_requested:
                    break
                round_task = asyncio.create_task(self.sync_once())
                self.register_operation(round_task)
                # a cancelled loop leaves the round to finish under shutdown
                reached = await asyncio.shield(round_task)
                if reached == 0:
                    consecutive_failures += 1
                    if consecutive_failures > 2:
                        logger.error(
                            f"No peer reachable for {consecutive_failures} "
                            "consecutive rounds"
                        )
                elif consecutive_failures:
                    logger.info("Peer sync recovered")
                    consecutive_failures = 0
        except asyncio.CancelledError:
            logger.debug("Peer sync task cancelled")


@asynccontextmanager
async def managed_lifecycle(
    registry: Registry,
    data_dir: Optional[Path] = None,
    peers: Sequence[str] = (),
    sync_interval: float = 60.0,
    shutdown_timeout: float = 30.0,
    process_lock: Optional[ProcessLock] = None,
) -> AsyncIterator[LifecycleManager]:
    """Start a lifecycle manager and shut it down on exit.

    Usage:
        async with managed_lifecycle(registry, data_dir, peers) as manager:
            await manager.wait_for_shutdown()
    """
    manager = LifecycleManager(
        registry, data_dir, peers, sync_interval, shutdown_timeout, process_lock
    )
    try:
        await manager.start()
        yield manager
    finally:
        await manager.shutdown()
