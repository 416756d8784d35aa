"""Service registries and their anti-entropy synchronization.

State transitions are pure functions over an immutable ``RegistryState``. The
``Registry`` class wraps one state behind a lock and publishes each new state
with a single reference swap, so readers see either the old catalog or the
new one, never a partial merge.
"""

from __future__ import annotations

import logging
import threading
from collections import deque
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .errors import (
    NotFoundError,
    ParseError,
    RegistryUnreachableError,
    ValidationFailedError,
    VersionConflictError,
)
from .model import ServiceDescription, category_matches
from .serialization import canonicalize, service_from_document, service_to_document

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FindQuery:
    """Conjunctive query; at least one criterion must be set."""

    output_concept: str | None = None
    category_prefix: str | None = None
    id: str | None = None

    def __post_init__(self) -> None:
        criteria = (self.output_concept, self.category_prefix, self.id)
        if all(c is None for c in criteria):
            raise ValidationFailedError([("query", "at least one criterion present")])

    def matches(self, desc: ServiceDescription) -> bool:
        if self.id is not None and desc.id != self.id:
            return False
        if self.output_concept is not None and self.output_concept not in desc.outputs:
            return False
        if self.category_prefix is not None and not category_matches(
            desc.functionality.category, self.category_prefix
        ):
            return False
        return True

    def as_dict(self) -> dict[str, str]:
        return {
            key: value
            for key, value in (
                ("output_concept", self.output_concept),
                ("category_prefix", self.category_prefix),
                ("id", self.id),
            )
            if value is not None
        }


@dataclass(frozen=True)
class RegistryState:
    registry_id: str
    catalog: Mapping[str, ServiceDescription] = field(default_factory=dict)
    last_sync_at: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "catalog", MappingProxyType(dict(self.catalog)))

    def services(self) -> list[ServiceDescription]:
        return [self.catalog[sid] for sid in sorted(self.catalog)]


def state_to_document(state: RegistryState) -> dict[str, Any]:
    """Snapshot and SYNC_STATE form: ``{registry_id, last_sync_at, services}``."""
    return {
        "registry_id": state.registry_id,
        "last_sync_at": state.last_sync_at,
        "services": [service_to_document(desc) for desc in state.services()],
    }


def state_from_document(document: Any) -> RegistryState:
    """Inverse of ``state_to_document``.

    Raises:
        ParseError: On a malformed snapshot, naming the offending field
    """
    if not isinstance(document, dict):
        raise ParseError("registry state must be an object")
    registry_id = document.get("registry_id")
    last_sync_at = document.get("last_sync_at", 0)
    services = document.get("services", [])
    if not isinstance(registry_id, str) or not registry_id:
        raise ParseError("registry_id must be a non-empty string", field="registry_id")
    if not isinstance(last_sync_at, int) or isinstance(last_sync_at, bool):
        raise ParseError("last_sync_at must be an integer", field="last_sync_at")
    if not isinstance(services, list):
        raise ParseError("services must be an array", field="services")
    catalog = {}
    for i, doc in enumerate(services):
        desc = service_from_document(doc, f"services[{i}]")
        catalog[desc.id] = desc
    return RegistryState(registry_id, catalog, last_sync_at)


def register(state: RegistryState, desc: ServiceDescription) -> RegistryState:
    """Insert ``desc`` or replace an older version of it.

    Raises:
        ValidationFailedError: If the description is invalid
        VersionConflictError: If the stored version is not lower
    """
    canon = canonicalize(desc)
    existing = state.catalog.get(canon.id)
    if existing is not None and canon.version <= existing.version:
        raise VersionConflictError(canon.id, existing.version, canon.version)
    catalog = dict(state.catalog)
    catalog[canon.id] = canon
    return replace(state, catalog=catalog)


def deregister(state: RegistryState, service_id: str) -> RegistryState:
    if service_id not in state.catalog:
        raise NotFoundError(service_id)
    catalog = dict(state.catalog)
    del catalog[service_id]
    return replace(state, catalog=catalog)


def find(state: RegistryState, query: FindQuery) -> list[ServiceDescription]:
    return [desc for desc in state.services() if query.matches(desc)]


def _pick(
    left: ServiceDescription,
    left_owner: str,
    right: ServiceDescription,
    right_owner: str,
) -> ServiceDescription:
    if left.version != right.version:
        return left if left.version > right.version else right
    return left if left_owner <= right_owner else right


def merged_catalog(a: RegistryState, b: RegistryState) -> dict[str, ServiceDescription]:
    """Id-wise union, highest version wins, ties to the smaller registry id."""
    catalog = dict(a.catalog)
    for sid, desc in b.catalog.items():
        if sid in catalog:
            catalog[sid] = _pick(catalog[sid], a.registry_id, desc, b.registry_id)
        else:
            catalog[sid] = desc
    return catalog


def sync_merge(
    a: RegistryState, b: RegistryState, now: int | None = None
) -> tuple[RegistryState, RegistryState]:
    """Make both catalogs equal to their merged union.

    Deterministic in argument order and idempotent. ``now``, when given,
    becomes both states' ``last_sync_at``.
    """
    catalog = merged_catalog(a, b)
    a_sync = a.last_sync_at if now is None else now
    b_sync = b.last_sync_at if now is None else now
    return (
        replace(a, catalog=catalog, last_sync_at=a_sync),
        replace(b, catalog=catalog, last_sync_at=b_sync),
    )


class RegistryLike(Protocol):
    """What the matching engine needs from a registry, local or remote."""

    registry_id: str

    def find(self, query: FindQuery) -> list[ServiceDescription]: ...


class Registry:
    """A live registry: linearizable mutations, lock-free reads.

    Args:
        registry_id: Token naming this registry
        services: Initial catalog
        on_change: Called with the new state after every mutation or sync
    """

    def __init__(
        self,
        registry_id: str,
        services: Iterable[ServiceDescription] = (),
        on_change: Callable[[RegistryState], None] | None = None,
    ) -> None:
        self.registry_id = registry_id
        self._lock = threading.Lock()
        self._state = RegistryState(registry_id)
        self.available = True
        self.on_change = on_change
        for desc in services:
            self._state = register(self._state, desc)

    @property
    def state(self) -> RegistryState:
        return self._state

    def _require_up(self) -> None:
        if not self.available:
            raise RegistryUnreachableError(self.registry_id)

    def _publish(self, state: RegistryState) -> None:
        self._state = state
        if self.on_change is not None:
            try:
                self.on_change(state)
            except Exception as e:
                logger.error(f"Registry {self.registry_id} change hook failed: {e}")

    def register(self, desc: ServiceDescription) -> ServiceDescription:
        self._require_up()
        with self._lock:
            self._publish(register(self._state, desc))
            stored = self._state.catalog[desc.id]
        logger.info(
            f"Registry {self.registry_id}: registered {desc.id} v{stored.version}"
        )
        return stored

    def deregister(self, service_id: str) -> None:
        self._require_up()
        with self._lock:
            self._publish(deregister(self._state, service_id))
        logger.info(f"Registry {self.registry_id}: deregistered {service_id}")

    def find(self, query: FindQuery) -> list[ServiceDescription]:
        self._require_up()
        return find(self._state, query)

    def load(self, state: RegistryState) -> None:
        """Replace the whole state, e.g. from a snapshot on disk."""
        with self._lock:
            self._state = replace(state, registry_id=self.registry_id)

    def pull_from(self, peer: RegistryState, now: int | None = None) -> bool:
        """Merge a peer's state into this registry only.

        Returns:
            True if the local catalog changed
        """
        with self._lock:
            merged, _ = sync_merge(self._state, peer, now)
            changed = dict(merged.catalog) != dict(self._state.catalog)
            self._publish(merged)
        if changed:
            logger.debug(
                f"Registry {self.registry_id}: pulled changes from {peer.registry_id}"
            )
        return changed


def sync_pair(a: Registry, b: Registry, now: int | None = None) -> None:
    """Pairwise sync of two live registries; locks taken in id order."""
    first, second = sorted((a, b), key=lambda r: r.registry_id)
    with first._lock, second._lock:
        new_a, new_b = sync_merge(a.state, b.state, now)
        a._publish(new_a)
        b._publish(new_b)


def full_mesh(registries: Sequence[Registry]) -> dict[str, list[str]]:
    ids = [r.registry_id for r in registries]
    return {rid: [other for other in ids if other != rid] for rid in ids}


def sync_round(
    registries: Sequence[Registry],
    topology: Mapping[str, Sequence[str]] | None = None,
    now: int | None = None,
) -> int:
    """One anti-entropy round along a spanning tree of ``topology``.

    Merges flow leaves-to-root, then root-to-leaves, so every reachable, UP
    registry ends with the identical catalog. DOWN registries are skipped.

    Returns:
        Number of pairwise merges performed
    """
    up = {r.registry_id: r for r in registries if r.available}
    if not up:
        return 0
    links = topology if topology is not None else full_mesh(list(up.values()))
    root = sorted(up)[0]
    order = [root]
    parent: dict[str, str] = {}
    queue = deque([root])
    while queue:
        current = queue.popleft()
        for neighbour in sorted(links.get(current, ())):
            if neighbour in up and neighbour != root and neighbour not in parent:
                parent[neighbour] = current
                order.append(neighbour)
                queue.append(neighbour)
    merges = 0
    for child in reversed(order[1:]):
        sync_pair(up[child], up[parent[child]], now)
        merges += 1
    for child in order[1:]:
        sync_pair(up[parent[child]], up[child], now)
        merges += 1
    unreached = sorted(set(up) - set(order))
    if unreached:
        logger.warning(f"Sync round did not reach registries {unreached}")
    return merges
