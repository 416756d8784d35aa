"""The matching engine.

Candidate plans come from backward chaining over input/output concepts: each
concept is supported by one of its producers plus supports for that
producer's inputs, tabled per ``(concept, depth)``. ``lookup`` serves requests
from fresh WSDB entries first and falls back to the registries when the cache
cannot produce a composition.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from pydantic import BaseModel, ConfigDict, Field

from .errors import AllReplicasDownError, NoCompositionError, RegistryUnreachableError
from .model import (
    CacheEntry,
    CompositionPlan,
    Concept,
    Metrics,
    Request,
    ServiceDescription,
    Stage,
)
from .plans import build_plan
from .registry import FindQuery, RegistryLike
from .wsdb import ReplicaSet

logger = logging.getLogger(__name__)

EXHAUSTIVE_CATALOG_LIMIT = 12

Support = frozenset[str]


class SearchLimits(BaseModel):
    """Bounds on the candidate search."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_depth: int = Field(
        default=4, gt=0, description="Longest producer chain explored per concept"
    )
    max_services: int = Field(default=6, gt=0, description="Largest plan emitted")
    max_alternatives: int = Field(
        default=16,
        gt=0,
        description="Supports kept per (concept, depth) in bounded mode",
    )
    exhaustive: bool = Field(
        default=False,
        description=(
            "Complete search when the catalog has at most "
            f"{EXHAUSTIVE_CATALOG_LIMIT} services"
        ),
    )


class CandidateSource(str, Enum):
    WSDB = "WSDB"
    REGISTRY = "REGISTRY"


@dataclass(frozen=True)
class CandidateSet:
    plans: list[CompositionPlan]
    source: CandidateSource
    catalog_snapshot: list[ServiceDescription]


def forward_closure(
    catalog: Iterable[ServiceDescription], provided: Iterable[Concept]
) -> set[Concept]:
    """Every concept derivable from ``provided`` by firing services."""
    known = set(provided)
    pending = list(catalog)
    while True:
        fired = [s for s in pending if set(s.inputs) <= known]
        if not fired:
            return known
        for service in fired:
            known.update(service.outputs)
        pending = [s for s in pending if s not in fired]


def _minimal_sets(sets: Iterable[Support]) -> list[Support]:
    """Inclusion-minimal members, ordered by (size, sorted ids)."""
    ordered = sorted(set(sets), key=lambda s: (len(s), sorted(s)))
    kept: list[Support] = []
    for candidate in ordered:
        if not any(existing <= candidate for existing in kept):
            kept.append(candidate)
    return kept


def _fires_and_covers(
    nodes: Sequence[ServiceDescription], provided: set[Concept], desired: set[Concept]
) -> bool:
    known = set(provided)
    pending = list(nodes)
    while pending:
        ready = [s for s in pending if set(s.inputs) <= known]
        if not ready:
            return False
        for service in ready:
            known.update(service.outputs)
        pending = [s for s in pending if s not in ready]
    return desired <= known


def is_minimal(
    nodes: Sequence[ServiceDescription], provided: set[Concept], desired: set[Concept]
) -> bool:
    """True when the node set is valid and dropping any single node breaks it."""
    if not _fires_and_covers(nodes, provided, desired):
        return False
    for index in range(len(nodes)):
        rest = [n for i, n in enumerate(nodes) if i != index]
        if _fires_and_covers(rest, provided, desired):
            return False
    return True


class CandidateGenerator:
    """Backward chainer with a ``(concept, depth)`` table.

    Args:
        catalog: Services to compose from (ids unique; later duplicates win)
        provided: Concepts the requester supplies
        limits: Search bounds
    """

    def __init__(
        self,
        catalog: Iterable[ServiceDescription],
        provided: Iterable[Concept],
        limits: SearchLimits,
    ) -> None:
        self.services = {s.id: s for s in catalog}
        self.provided = frozenset(provided)
        self.exhaustive = (
            limits.exhaustive and len(self.services) <= EXHAUSTIVE_CATALOG_LIMIT
        )
        if self.exhaustive:
            self.max_depth = max(len(self.services), 1)
            self.max_services = max(len(self.services), 1)
            self.max_alternatives: int | None = None
        else:
            self.max_depth = limits.max_depth
            self.max_services = limits.max_services
            self.max_alternatives = limits.max_alternatives
        self.producers: dict[Concept, list[ServiceDescription]] = {}
        for service in self.services.values():
            for concept in service.outputs:
                self.producers.setdefault(concept, []).append(service)
        for options in self.producers.values():
            options.sort(key=lambda s: (len(s.inputs), s.id))
        self.table: dict[tuple[Concept, int], list[Support]] = {}
        self.table_hits = 0
        self.table_misses = 0

    def _combine(
        self, choices: Sequence[list[Support]]
    ) -> Iterable[tuple[Support, ...]]:
        combos: Iterable[tuple[Support, ...]] = itertools.product(*choices)
        if self.max_alternatives is not None:
            combos = itertools.islice(combos, self.max_alternatives**2)
        return combos

    def supports(self, concept: Concept, depth: int) -> list[Support]:
        """Minimal service sets producing ``concept`` within ``depth`` chained steps."""
        if concept in self.provided:
            return [frozenset()]
        if depth <= 0:
            return []
        key = (concept, depth)
        if key in self.table:
            self.table_hits += 1
            return self.table[key]
        self.table_misses += 1
        # Cycles terminate because every recursive step lowers the depth.
        found: list[Support] = []
        for producer in self.producers.get(concept, []):
            choices = [self.supports(c, depth - 1) for c in producer.inputs]
            if any(not options for options in choices):
                continue
            for combo in self._combine(choices):
                merged = frozenset({producer.id}).union(*combo)
                if len(merged) <= self.max_services:
                    found.append(merged)
        result = _minimal_sets(found)
        if self.max_alternatives is not None:
            result = result[: self.max_alternatives]
        self.table[key] = result
        return result

    def node_sets(self, desired: Iterable[Concept]) -> list[Support]:
        goals = sorted(set(desired) - self.provided)
        choices = [self.supports(c, self.max_depth) for c in goals]
        if any(not options for options in choices):
            return []
        merged = (frozenset().union(*combo) for combo in self._combine(choices))
        return _minimal_sets(s for s in merged if len(s) <= self.max_services)


def generate_candidates(
    catalog: Sequence[ServiceDescription],
    request: Request,
    limits: SearchLimits | None = None,
) -> list[CompositionPlan]:
    """All minimal plans for ``request`` within ``limits``.

    Returns:
        Plans ordered by node count, then sorted id list. The single empty plan
        when every desired concept is already provided.

    Raises:
        NoCompositionError: If some desired concept is unreachable, or the
            search bounds exclude every composition
    """
    limits = limits or SearchLimits()
    provided = set(request.provided)
    desired = set(request.desired)
    if desired <= provided:
        return [CompositionPlan.empty(provided, desired)]
    unreachable = desired - forward_closure(catalog, provided)
    if unreachable:
        raise NoCompositionError(unreachable)

    generator = CandidateGenerator(catalog, provided, limits)
    plans: dict[tuple, CompositionPlan] = {}
    for node_set in generator.node_sets(desired):
        nodes = [generator.services[sid] for sid in sorted(node_set)]
        if not is_minimal(nodes, provided, desired):
            continue
        plan = build_plan(nodes, provided, desired)
        plans.setdefault(plan.identity(), plan)
    logger.debug(
        f"Generated {len(plans)} candidates from {len(generator.services)} services "
        f"(table hits {generator.table_hits}, misses {generator.table_misses})"
    )
    if not plans:
        raise NoCompositionError([], reason="search limits")
    return sorted(plans.values(), key=lambda p: (len(p.nodes), list(p.node_ids)))


def _prefer(
    current: ServiceDescription | None, offered: ServiceDescription
) -> ServiceDescription:
    if current is None or offered.version > current.version:
        return offered
    return current


def fetch_from_registries(
    request: Request, registries: Sequence[RegistryLike], limits: SearchLimits
) -> dict[str, ServiceDescription]:
    """Per-concept ``find(output_concept=X)`` expansion from the desired concepts.

    Inputs of fetched producers that are not provided are expanded in turn,
    for at most ``limits.max_depth`` rounds (until exhausted in exhaustive mode).

    Raises:
        RegistryUnreachableError: If no registry answered any query
    """
    fetched: dict[str, ServiceDescription] = {}
    seen: set[Concept] = set(request.provided)
    frontier = sorted(set(request.desired) - seen)
    needed = bool(frontier)
    answered = False
    rounds = 0
    while frontier and (limits.exhaustive or rounds < limits.max_depth):
        seen.update(frontier)
        discovered: set[Concept] = set()
        for concept in frontier:
            for registry in registries:
                try:
                    results = registry.find(FindQuery(output_concept=concept))
                except RegistryUnreachableError:
                    logger.warning(
                        f"Registry {registry.registry_id} unreachable during lookup"
                    )
                    continue
                answered = True
                for service in results:
                    fetched[service.id] = _prefer(fetched.get(service.id), service)
                    discovered.update(service.inputs)
        frontier = sorted(discovered - seen)
        rounds += 1
    if needed and not answered:
        raise RegistryUnreachableError()
    return fetched


def lookup(
    request: Request,
    replica_set: ReplicaSet,
    registries: Sequence[RegistryLike],
    now: int,
    limits: SearchLimits | None = None,
    ttl_s: int = 300,
    delta: Metrics | None = None,
) -> tuple[CandidateSet, Metrics]:
    """Resolve a request to candidate plans, WSDB first.

    Stages and counters are recorded into ``delta`` as they happen, so a
    caller that passes its own Metrics keeps the partial trace on failure.

    Returns:
        The candidate set and the metrics delta

    Raises:
        NoCompositionError: If neither source yields a plan
        RegistryUnreachableError: If the WSDB is insufficient and no registry answers
    """
    limits = limits or SearchLimits()
    delta = delta if delta is not None else Metrics()
    delta.record(Stage.MATCH_WSDB)
    cached: list[ServiceDescription] = []
    try:
        cached, delta.replica_used = replica_set.read_failover(None, now)
        plans = generate_candidates(cached, request, limits)
        delta.wsdb_hits += 1
        logger.debug(f"WSDB answered request from {delta.replica_used}")
        return CandidateSet(plans, CandidateSource.WSDB, cached), delta
    except AllReplicasDownError:
        logger.warning("All WSDB replicas are down, falling back to registries")
    except NoCompositionError as e:
        logger.info(
            f"WSDB cannot compose request ({e.message}), falling back to registries"
        )

    delta.record(Stage.MATCH_REGISTRY)
    fetched = fetch_from_registries(request, registries, limits)
    catalog = {service.id: service for service in cached}
    catalog.update(fetched)
    entries = [CacheEntry(service, now, ttl_s) for service in fetched.values()]
    if entries:
        try:
            replica_set.write_all(entries, now)
        except AllReplicasDownError:
            logger.warning(
                "Fetched services could not be cached: all WSDB replicas are down"
            )
    delta.registry_fetches += 1
    snapshot = [catalog[sid] for sid in sorted(catalog)]
    plans = generate_candidates(snapshot, request, limits)
    return CandidateSet(plans, CandidateSource.REGISTRY, snapshot), delta
