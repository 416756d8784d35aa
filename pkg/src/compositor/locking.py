"""Per-registry process locking.

One ``registry serve`` process may own a data directory entry for a given
registry id. Locks left behind by dead processes, or not refreshed within
``max_age_seconds``, are treated as stale and removed.
"""

import json
import logging
import os
import time
from pathlib import Path
from typing import Any, Dict, Optional

import psutil

from .atomic_ops import atomic_write_json

logger = logging.getLogger(__name__)


class ProcessLock:
    """Single-owner lock file ``.registry-<id>.lock`` inside ``data_dir``.

    The file records pid, hostname and a heartbeat timestamp. A running owner
    calls ``refresh`` periodically so the heartbeat never ages out.
    """

    def __init__(
        self, data_dir: Path, registry_id: str, max_age_seconds: float = 300.0
    ) -> None:
        self.data_dir = data_dir
        self.registry_id = registry_id
        self.lock_file = data_dir / f".registry-{registry_id}.lock"
        self.max_age_seconds = max_age_seconds
        self.current_pid = os.getpid()
        self.acquired = False

        self.data_dir.mkdir(parents=True, exist_ok=True)

    def _lock_data(self) -> Dict[str, Any]:
        now = time.time()
        return {
            "pid": self.current_pid,
            "registry_id": self.registry_id,
            "timestamp": now,
            "hostname": os.uname().nodename if hasattr(os, 'uname') else "unknown",
        }

    def acquire(self) -> bool:
        """Attempt to acquire the lock.

        Returns:
            True if the lock was acquired, False if a live process holds it
        """
        if self.acquired:
            return True

        try:
            self.cleanup_stale()

            if self.lock_file.exists():
                if self._is_lock_valid():
                    logger.info(
                        f"Registry {self.registry_id} is already served "
                        f"(lock at {self.lock_file})"
                    )
                    return False
                self._remove_lock_file()

            # O_EXCL makes creation atomic against a concurrent starter
            try:
                fd = os.open(str(self.lock_file), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                with os.fdopen(fd, 'w') as f:
                    json.dump(self._lock_data(), f, indent=2)
            except FileExistsError:
                logger.info(f"Another process acquired {self.lock_file} first")
                return False

            self.acquired = True
            logger.info(
                f"Registry lock acquired for {self.registry_id} "
                f"(PID: {self.current_pid})"
            )
            return True

        except OSError as e:
            logger.error(f"Failed to acquire registry lock: {e}")
            return False

    def refresh(self) -> None:
        """Rewrite the heartbeat timestamp of a held lock."""
        if not self.acquired:
            return
        try:
            atomic_write_json(self.lock_file, self._lock_data())
        except OSError as e:
            logger.warning(f"Failed to refresh registry lock: {e}")

    def release(self) -> None:
        if not self.acquired:
            return

        try:
            lock_data = self._read_lock_data()
            if lock_data and lock_data.get("pid") == self.current_pid:
                self._remove_lock_file()
                logger.info(f"Registry lock released for {self.registry_id}")
            elif self.lock_file.exists():
                logger.warning("Lock file appears to be owned by another process")
        finally:
            self.acquired = False

    def is_locked(self) -> bool:
        return self.lock_file.exists() and self._is_lock_valid()

    def cleanup_stale(self) -> None:
        """Remove the lock file if it is corrupt, too old, or its owner is gone."""
        if not self.lock_file.exists():
            return

        lock_data = self._read_lock_data()
        if not lock_data:
            logger.warning("Removing corrupt lock file")
            self._remove_lock_file()
            return

        lock_age = time.time() - lock_data.get("timestamp", 0)
        if lock_age > self.max_age_seconds:
            logger.info(f"Removing stale lock file (age: {lock_age:.1f}s)")
            self._remove_lock_file()
            return

        pid = lock_data.get("pid")
        if pid and not self._is_process_running(pid):
            logger.info(f"Removing lock for dead process (PID: {pid})")
            self._remove_lock_file()

    def _is_lock_valid(self) -> bool:
        lock_data = self._read_lock_data()
        if not lock_data:
            return False
        if lock_data.get("pid") == self.current_pid:
            return True
        if time.time() - lock_data.get("timestamp", 0) > self.max_age_seconds:
            return False
        pid = lock_data.get("pid")
        return bool(pid) and self._is_process_running(pid)

    def _read_lock_data(self) -> Optional[dict]:
        try:
            with self.lock_file.open('r', encoding='utf-8') as f:
                data = json.load(f)
        except (json.JSONDecodeError, FileNotFoundError, PermissionError):
            return None
        return data if isinstance(data, dict) else None

    def _is_process_running(self, pid: int) -> bool:
        try:
            return psutil.pid_exists(pid)
        except Exception:
            try:
                os.kill(pid, 0)
                return True
            except (OSError, ProcessLookupError):
                return False

    def _remove_lock_file(self) -> None:
        try:
            self.lock_file.unlink(missing_ok=True)
        except OSError as e:
            logger.error(f"Failed to remove lock file: {e}")

    def __enter__(self) -> "ProcessLock":
        if not self.acquire():
            raise RuntimeError(
                f"Registry {self.registry_id} is locked by another process"
            )
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.release()
