"""The replicated Web Services Database (WSDB).

Each replica is a TTL-aged cache of service descriptions keyed by service id.
A ``ReplicaSet`` reads from the first healthy replica in a fixed failover
order and writes to every healthy replica, accepting partial success.
"""

from __future__ import annotations

import logging
import threading
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .atomic_ops import append_json_line, read_json_lines
from .errors import (
    AllReplicasDownError,
    ParseError,
    ReplicaDownError,
    ValidationFailedError,
)
from .model import CacheEntry, ServiceDescription
from .registry import FindQuery
from .serialization import (
    cache_entry_from_document,
    cache_entry_to_document,
    serialize_service,
)

logger = logging.getLogger(__name__)


class Health(str, Enum):
    UP = "UP"
    DOWN = "DOWN"


class WriteStatus(str, Enum):
    ACCEPTED = "ACCEPTED"
    SKIPPED = "SKIPPED"


def precedence(entry: CacheEntry) -> tuple[int, int, bytes]:
    """Total order on entries for one id: stamp, then version, then serialized bytes."""
    return entry.fetched_at, entry.service.version, serialize_service(entry.service)


class Replica:
    """One WSDB replica.

    Args:
        name: Replica name reported in metrics
        journal_path: Optional append-only JSON-lines journal, replayed on start
    """

    def __init__(self, name: str, journal_path: Path | None = None) -> None:
        self.name = name
        self.journal_path = journal_path
        self._lock = threading.Lock()
        self._entries: dict[str, CacheEntry] = {}
        self.health = Health.UP
        if journal_path is not None and journal_path.exists():
            self._replay(journal_path)

    @property
    def up(self) -> bool:
        return self.health is Health.UP

    def set_health(self, health: Health) -> None:
        if health is not self.health:
            logger.info(f"Replica {self.name} is now {health.value}")
        self.health = health

    def _replay(self, path: Path) -> None:
        replayed = 0
        for lineno, record in read_json_lines(path):
            try:
                entry = cache_entry_from_document(record)
            except ParseError as e:
                logger.warning(f"Skipping journal line {lineno} of {path}: {e}")
                continue
            current = self._entries.get(entry.service.id)
            if current is None or entry.fetched_at >= current.fetched_at:
                self._entries[entry.service.id] = entry
            replayed += 1
        logger.info(
            f"Replica {self.name}: replayed {replayed} journal entries from {path}"
        )

    def _require_up(self) -> None:
        if not self.up:
            raise ReplicaDownError(self.name)

    def _store(self, entries: Iterable[CacheEntry]) -> None:
        with self._lock:
            for entry in entries:
                self._entries[entry.service.id] = entry
                if self.journal_path is not None:
                    append_json_line(self.journal_path, cache_entry_to_document(entry))

    def put(self, entries: Sequence[CacheEntry], now: int) -> None:
        """Store entries keyed by service id, overwriting prior entries.

        Raises:
            ReplicaDownError: If the replica is DOWN
            ValidationFailedError: If an entry is not stamped ``now`` or has ttl ≤ 0
        """
        self._require_up()
        for entry in entries:
            if entry.fetched_at != now:
                raise ValidationFailedError([("fetched_at", "fetched_at = now")])
            if entry.ttl_s <= 0:
                raise ValidationFailedError([("ttl_s", "ttl_s > 0")])
        self._store(entries)

    def get_fresh(self, query: FindQuery | None, now: int) -> list[ServiceDescription]:
        """Services FRESH at ``now`` matching ``query`` (all if None), by id."""
        self._require_up()
        with self._lock:
            entries = list(self._entries.values())
        return sorted(
            (
                entry.service
                for entry in entries
                if entry.is_fresh(now)
                and (query is None or query.matches(entry.service))
            ),
            key=lambda s: s.id,
        )

    def evict_expired(self, now: int) -> int:
        """Drop STALE entries.

        Returns:
            Number of entries removed
        """
        self._require_up()
        with self._lock:
            stale = [
                sid for sid, entry in self._entries.items() if not entry.is_fresh(now)
            ]
            for sid in stale:
                del self._entries[sid]
        if stale:
            logger.debug(f"Replica {self.name}: evicted {len(stale)} stale entries")
        return len(stale)

    def entries(self) -> dict[str, CacheEntry]:
        with self._lock:
            return dict(self._entries)

    def entry(self, service_id: str) -> CacheEntry | None:
        with self._lock:
            return self._entries.get(service_id)

    def absorb(self, entries: Iterable[CacheEntry]) -> int:
        """Adopt entries that outrank the local copy, whatever their stamp."""
        with self._lock:
            newer = [
                entry
                for entry in entries
                if entry.service.id not in self._entries
                or precedence(entry) > precedence(self._entries[entry.service.id])
            ]
        self._store(newer)
        return len(newer)


class ReplicaSet:
    """Ordered replicas; the order is the failover order.

    Raises:
        ValueError: If constructed without replicas
    """

    def __init__(self, replicas: Sequence[Replica]) -> None:
        if not replicas:
            raise ValueError("a replica set needs at least one replica")
        self.replicas: tuple[Replica, ...] = tuple(replicas)

    @classmethod
    def create(cls, count: int, journal_dir: Path | None = None) -> ReplicaSet:
        replicas = []
        for index in range(1, count + 1):
            journal = None
            if journal_dir is not None:
                journal = journal_dir / f"wsdb-{index}.jsonl"
            replicas.append(Replica(f"wsdb-{index}", journal))
        return cls(replicas)

    def __len__(self) -> int:
        return len(self.replicas)

    def __getitem__(self, index: int) -> Replica:
        return self.replicas[index]

    def health(self) -> dict[str, Health]:
        return {replica.name: replica.health for replica in self.replicas}

    def read_failover(
        self, query: FindQuery | None, now: int
    ) -> tuple[list[ServiceDescription], str]:
        """Fresh services from the first UP replica.

        Returns:
            The services and the name of the replica that served them

        Raises:
            AllReplicasDownError: If no replica could serve the read
        """
        healthy = [replica for replica in self.replicas if replica.up]
        for replica in healthy:
            try:
                return replica.get_fresh(query, now), replica.name
            except ReplicaDownError:
                logger.info(
                    f"Replica {replica.name} went down during read, failing over"
                )
        raise AllReplicasDownError()

    def write_all(
        self, entries: Sequence[CacheEntry], now: int
    ) -> dict[str, WriteStatus]:
        """Apply entries to every UP replica.

        Returns:
            Per-replica status; DOWN replicas are reported as SKIPPED

        Raises:
            AllReplicasDownError: If no replica accepted the write
        """
        statuses: dict[str, WriteStatus] = {}
        for replica in self.replicas:
            try:
                replica.put(entries, now)
                statuses[replica.name] = WriteStatus.ACCEPTED
            except ReplicaDownError:
                statuses[replica.name] = WriteStatus.SKIPPED
        if WriteStatus.ACCEPTED not in statuses.values():
            raise AllReplicasDownError()
        skipped = [
            name for name, status in statuses.items() if status is WriteStatus.SKIPPED
        ]
        if skipped:
            logger.warning(f"WSDB write skipped DOWN replicas {skipped}")
        return statuses

    def sync_replicas(self) -> int:
        """Bring every UP replica to the id-wise union.

        The entry with the highest :func:`precedence` wins for each id.

        Returns:
            Number of entries copied between replicas
        """
        healthy = [replica for replica in self.replicas if replica.up]
        union: dict[str, CacheEntry] = {}
        for replica in healthy:
            for sid, entry in replica.entries().items():
                if sid not in union or precedence(entry) > precedence(union[sid]):
                    union[sid] = entry
        copied = sum(replica.absorb(union.values()) for replica in healthy)
        if copied:
            logger.info(f"WSDB replica sync copied {copied} entries")
        return copied
