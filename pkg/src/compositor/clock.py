"""Simulated integer-seconds clock shared by every time-dependent operation."""

import logging
import threading

logger = logging.getLogger(__name__)


class SimClock:
    """Monotonic simulated clock. Only ``advance`` and ``set`` move it."""

    def __init__(self, start: int = 0) -> None:
        if start < 0:
            raise ValueError("clock cannot start before 0")
        self._now = start
        self._lock = threading.Lock()

    def now(self) -> int:
        return self._now

    def advance(self, seconds: int) -> int:
        """Move forward by ``seconds`` and return the new time."""
        if seconds < 0:
            raise ValueError("the simulated clock never runs backwards")
        with self._lock:
            self._now += seconds
            return self._now

    def set(self, now: int) -> int:
        with self._lock:
            if now < self._now:
                raise ValueError(f"cannot move clock back from {self._now} to {now}")
            self._now = now
            return self._now
