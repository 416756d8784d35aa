"""Canonical domain types shared by every compositor module.

All values here are immutable once constructed. Set-valued fields are stored
as sorted, de-duplicated tuples so that equality, hashing and iteration order
never depend on how a value was built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping, NamedTuple

Concept = str
AttributeValue = float | str

QOS_ATTRIBUTES: tuple[str, ...] = (
    "response_time_ms",
    "cost",
    "availability",
    "reliability",
    "throughput_rps",
)
LOWER_IS_BETTER = frozenset({"response_time_ms", "cost"})

SOURCE = "SOURCE"
SINK = "SINK"

DEFAULT_THROUGHPUT_MAX_RPS = 1e9


def _sorted_unique(values: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(values)))


def category_segments(path: str) -> list[str]:
    return path.split("/")


def category_matches(category: str, prefix: str) -> bool:
    """Segment-wise prefix test: ``travel/booking`` matches ``travel/booking/x``."""
    wanted = category_segments(prefix)
    actual = category_segments(category)
    return actual[: len(wanted)] == wanted


@dataclass(frozen=True)
class QoSVector:
    response_time_ms: float
    cost: float
    availability: float
    reliability: float
    throughput_rps: float

    def get(self, attribute: str) -> float:
        if attribute not in QOS_ATTRIBUTES:
            raise KeyError(attribute)
        return float(getattr(self, attribute))

    def as_dict(self) -> dict[str, float]:
        return {name: float(getattr(self, name)) for name in QOS_ATTRIBUTES}


class ConstraintOp(str, Enum):
    LE = "<="
    GE = ">="
    EQ = "="
    NE = "!="

    @property
    def numeric_only(self) -> bool:
        return self in (ConstraintOp.LE, ConstraintOp.GE)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


@dataclass(frozen=True)
class Constraint:
    """A single ``attribute op literal`` rule of a functionality requirement."""

    attribute: str
    op: ConstraintOp
    literal: AttributeValue

    def satisfied_by(self, value: AttributeValue) -> bool:
        if self.op.numeric_only:
            if not (_is_number(value) and _is_number(self.literal)):
                return False
            if self.op is ConstraintOp.LE:
                return float(value) <= float(self.literal)
            return float(value) >= float(self.literal)
        if _is_number(value) and _is_number(self.literal):
            equal = float(value) == float(self.literal)
        elif isinstance(value, str) and isinstance(self.literal, str):
            equal = value == self.literal
        else:
            equal = False
        return equal if self.op is ConstraintOp.EQ else not equal


@dataclass(frozen=True)
class FunctionalitySpec:
    """Category path plus the attribute map a service declares."""

    category: str
    attributes: tuple[tuple[str, AttributeValue], ...] = ()

    def __post_init__(self) -> None:
        pairs = self.attributes
        if isinstance(pairs, Mapping):
            pairs = pairs.items()
        ordered = tuple(sorted(pairs, key=lambda kv: kv[0]))
        object.__setattr__(self, "attributes", ordered)

    @property
    def attribute_map(self) -> dict[str, AttributeValue]:
        return dict(self.attributes)


@dataclass(frozen=True)
class ServiceDescription:
    id: str
    name: str
    inputs: tuple[Concept, ...]
    outputs: tuple[Concept, ...]
    functionality: FunctionalitySpec
    qos: QoSVector
    endpoint: str
    version: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", _sorted_unique(self.inputs))
        object.__setattr__(self, "outputs", _sorted_unique(self.outputs))

    def with_version(self, version: int) -> ServiceDescription:
        return replace(self, version=version)


@dataclass(frozen=True)
class QoSBounds:
    """Hard limits a plan's aggregate QoS must respect."""

    max_response_time_ms: float | None = None
    max_cost: float | None = None
    min_availability: float | None = None
    min_reliability: float | None = None
    min_throughput_rps: float | None = None

    def violations(self, qos: QoSVector) -> list[str]:
        upper = {
            "max_response_time_ms": (self.max_response_time_ms, qos.response_time_ms),
            "max_cost": (self.max_cost, qos.cost),
        }
        lower = {
            "min_availability": (self.min_availability, qos.availability),
            "min_reliability": (self.min_reliability, qos.reliability),
            "min_throughput_rps": (self.min_throughput_rps, qos.throughput_rps),
        }
        broken = [name for name, (b, v) in upper.items() if b is not None and v > b]
        broken += [name for name, (b, v) in lower.items() if b is not None and v < b]
        return broken

    def as_dict(self) -> dict[str, float]:
        return {
            name: value
            for name, value in (
                ("max_response_time_ms", self.max_response_time_ms),
                ("max_cost", self.max_cost),
                ("min_availability", self.min_availability),
                ("min_reliability", self.min_reliability),
                ("min_throughput_rps", self.min_throughput_rps),
            )
            if value is not None
        }


def equal_weights() -> dict[str, float]:
    share = 1.0 / len(QOS_ATTRIBUTES)
    return {name: share for name in QOS_ATTRIBUTES}


@dataclass(frozen=True)
class Request:
    """A requester's goal, already translated into the internal form."""

    provided: frozenset[Concept]
    desired: frozenset[Concept]
    category_requirement: str | None = None
    constraints: tuple[Constraint, ...] = ()
    weights: Mapping[str, float] = field(default_factory=equal_weights)
    bounds: QoSBounds = field(default_factory=QoSBounds)
    correlation_id: str | None = None
    inputs: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "provided", frozenset(self.provided))
        object.__setattr__(self, "desired", frozenset(self.desired))
        object.__setattr__(self, "constraints", tuple(self.constraints))

    def normalized_weights(self) -> dict[str, float]:
        total = math.fsum(self.weights.get(name, 0.0) for name in QOS_ATTRIBUTES)
        if total <= 0:
            raise ValueError("weights must sum to a positive value")
        return {name: self.weights.get(name, 0.0) / total for name in QOS_ATTRIBUTES}


class Edge(NamedTuple):
    """Data edge ``producer -> consumer`` carrying one concept.

    ``producer`` is a service id or ``SOURCE``; ``consumer`` is a service id or
    ``SINK``.
    """

    producer: str
    consumer: str
    concept: Concept


@dataclass(frozen=True)
class CompositionPlan:
    nodes: tuple[ServiceDescription, ...] = ()
    edges: frozenset[Edge] = frozenset()
    layers: tuple[tuple[str, ...], ...] = ()
    aggregate: QoSVector | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda s: s.id)))
        object.__setattr__(self, "edges", frozenset(Edge(*e) for e in self.edges))
        layers = tuple(tuple(sorted(layer)) for layer in self.layers)
        object.__setattr__(self, "layers", layers)

    @classmethod
    def empty(
        cls, provided: Iterable[Concept], desired: Iterable[Concept]
    ) -> CompositionPlan:
        have = set(provided)
        return cls(edges=frozenset(Edge(SOURCE, SINK, c) for c in desired if c in have))

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.nodes)

    @property
    def is_empty(self) -> bool:
        return not self.nodes

    def node(self, service_id: str) -> ServiceDescription:
        for service in self.nodes:
            if service.id == service_id:
                return service
        raise KeyError(service_id)

    def layer_index(self) -> dict[str, int]:
        return {sid: k for k, layer in enumerate(self.layers) for sid in layer}

    def identity(self) -> tuple[tuple[str, ...], frozenset[Edge]]:
        """Key used to merge duplicate plans (same node set and edges)."""
        return self.node_ids, self.edges

    def with_aggregate(self, aggregate: QoSVector) -> CompositionPlan:
        return replace(self, aggregate=aggregate)


@dataclass(frozen=True)
class CacheEntry:
    """A WSDB record: a service plus its fetch time and time-to-live."""

    service: ServiceDescription
    fetched_at: int
    ttl_s: int

    @property
    def expires_at(self) -> int:
        return self.fetched_at + self.ttl_s

    def is_fresh(self, now: int) -> bool:
        return now < self.fetched_at + self.ttl_s


class Stage(str, Enum):
    TRANSLATE_IN = "TRANSLATE_IN"
    MATCH_WSDB = "MATCH_WSDB"
    MATCH_REGISTRY = "MATCH_REGISTRY"
    EVALUATE_INTERFACE = "EVALUATE_INTERFACE"
    EVALUATE_FUNCTIONALITY = "EVALUATE_FUNCTIONALITY"
    COMPOSE = "COMPOSE"
    EXECUTE = "EXECUTE"
    TRANSLATE_OUT = "TRANSLATE_OUT"


@dataclass
class Metrics:
    """Counters, timings and the ordered stage trace of one pipeline run."""

    wsdb_hits: int = 0
    registry_fetches: int = 0
    composition_time_ms: float = 0.0
    exposure_time_ms: float = 0.0
    event_trace: list[Stage] = field(default_factory=list)
    replica_used: str | None = None

    def record(self, stage: Stage) -> None:
        self.event_trace.append(stage)

    def merge(self, delta: Metrics) -> None:
        self.wsdb_hits += delta.wsdb_hits
        self.registry_fetches += delta.registry_fetches
        self.composition_time_ms += delta.composition_time_ms
        self.exposure_time_ms += delta.exposure_time_ms
        self.event_trace.extend(delta.event_trace)
        if delta.replica_used is not None:
            self.replica_used = delta.replica_used

    def trace_names(self) -> list[str]:
        return [stage.value for stage in self.event_trace]

    def as_dict(self) -> dict[str, Any]:
        return {
            "wsdb_hits": self.wsdb_hits,
            "registry_fetches": self.registry_fetches,
            "composition_time_ms": self.composition_time_ms,
            "exposure_time_ms": self.exposure_time_ms,
            "event_trace": self.trace_names(),
            "replica_used": self.replica_used,
        }
