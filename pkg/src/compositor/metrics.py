"""Process-wide aggregation of per-request metrics."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from typing import Any

from .model import Metrics

logger = logging.getLogger(__name__)


class MetricsRecorder:
    """Merges per-request ``Metrics`` deltas under a lock."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.totals = Metrics()
        self.requests = 0
        self.failures = 0
        self.errors: Counter[str] = Counter()
        self.replicas: Counter[str] = Counter()

    def record(self, delta: Metrics, error_code: str | None = None) -> None:
        with self._lock:
            self.requests += 1
            self.totals.wsdb_hits += delta.wsdb_hits
            self.totals.registry_fetches += delta.registry_fetches
            self.totals.composition_time_ms += delta.composition_time_ms
            self.totals.exposure_time_ms += delta.exposure_time_ms
            if delta.replica_used is not None:
                self.replicas[delta.replica_used] += 1
            if error_code is not None:
                self.failures += 1
                self.errors[error_code] += 1

    def record_exposure(self, elapsed_ms: float) -> None:
        """Add the time spent making services discoverable in a registry."""
        with self._lock:
            self.totals.exposure_time_ms += elapsed_ms

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "requests": self.requests,
                "failures": self.failures,
                "wsdb_hits": self.totals.wsdb_hits,
                "registry_fetches": self.totals.registry_fetches,
                "composition_time_ms": self.totals.composition_time_ms,
                "exposure_time_ms": self.totals.exposure_time_ms,
                "errors": dict(sorted(self.errors.items())),
                "replica_used": dict(sorted(self.replicas.items())),
            }
