"""The execution engine: runs composed plans over simulated services.

Execution follows a layer-barrier timeline on a simulated clock. A request's
values enter with one ingress hop, each layer runs in parallel and takes as
long as its slowest service, and results leave with one egress hop. Between
consecutive layers, decentralized dataflow pays one direct transfer while
centralized dataflow relays through the coordinator (two hops plus overhead).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

from .errors import MissingInputError, NoHealthyPlanError, ServiceDownError
from .evaluator import ScoredPlan
from .model import SINK, SOURCE, CompositionPlan, Concept, ServiceDescription

logger = logging.getLogger(__name__)

Behavior = Callable[[Mapping[Concept, Any]], Mapping[Concept, Any]]


class DataflowMode(str, Enum):
    CENTRALIZED = "centralized"
    DECENTRALIZED = "decentralized"


def tagging_behavior(service: ServiceDescription) -> Behavior:
    """Default behavior: each output records the service id and its inputs."""

    def run(inputs: Mapping[Concept, Any]) -> dict[Concept, Any]:
        args = ",".join(str(inputs[concept]) for concept in sorted(inputs))
        return {
            concept: f"{service.id}:{concept}({args})" for concept in service.outputs
        }

    return run


@dataclass
class SimEnv:
    """Simulated services plus the transfer-cost model.

    ``faults`` holds ids that are DOWN from the start; ``fail_at_ms`` maps ids
    to the simulated time at which they go DOWN mid-run.
    """

    behaviors: dict[str, Behavior] = field(default_factory=dict)
    processing_time_ms: dict[str, float] = field(default_factory=dict)
    edge_cost_ms: float = 5.0
    coordinator_overhead_ms: float = 0.0
    faults: set[str] = field(default_factory=set)
    fail_at_ms: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.edge_cost_ms < 0 or self.coordinator_overhead_ms < 0:
            raise ValueError("transfer costs must be non-negative")
        if any(t < 0 for t in self.processing_time_ms.values()):
            raise ValueError("processing times must be non-negative")

    @classmethod
    def for_plan(
        cls,
        plan: CompositionPlan,
        edge_cost_ms: float = 5.0,
        coordinator_overhead_ms: float = 0.0,
        faults: set[str] | None = None,
    ) -> SimEnv:
        env = cls(
            edge_cost_ms=edge_cost_ms,
            coordinator_overhead_ms=coordinator_overhead_ms,
            faults=set(faults or ()),
        )
        env.ensure(plan)
        return env

    def ensure(self, plan: CompositionPlan) -> None:
        """Give every plan node a behavior and a processing time if it lacks one."""
        for node in plan.nodes:
            self.behaviors.setdefault(node.id, tagging_behavior(node))
            self.processing_time_ms.setdefault(node.id, node.qos.response_time_ms)

    def processing_time(self, node: ServiceDescription) -> float:
        return self.processing_time_ms.get(node.id, node.qos.response_time_ms)

    def is_down(self, service_id: str, at_ms: float) -> bool:
        if service_id in self.faults:
            return True
        fail_at = self.fail_at_ms.get(service_id)
        return fail_at is not None and at_ms >= fail_at

    def hop_cost(self, mode: DataflowMode) -> float:
        """Cost of moving data between two consecutive layers."""
        if mode is DataflowMode.CENTRALIZED:
            return 2 * self.edge_cost_ms + self.coordinator_overhead_ms
        return self.edge_cost_ms


@dataclass(frozen=True)
class TraceEvent:
    time_ms: float
    service_id: str
    kind: str


@dataclass(frozen=True)
class ExecutionResult:
    outputs: Mapping[Concept, Any]
    latency_ms: float
    mode: DataflowMode
    trace: tuple[TraceEvent, ...] = ()

    def completions(self) -> list[str]:
        return [event.service_id for event in self.trace if event.kind == "finish"]

    def to_dict(self) -> dict[str, Any]:
        return {
            "outputs": dict(self.outputs),
            "latency_ms": self.latency_ms,
            "mode": self.mode.value,
        }


def _layer_schedule(
    plan: CompositionPlan, env: SimEnv, mode: DataflowMode
) -> tuple[list[tuple[float, float]], float]:
    """Start and finish time of every layer, plus total latency."""
    by_id = {node.id: node for node in plan.nodes}
    hop = env.hop_cost(mode)
    schedule = []
    clock = env.edge_cost_ms
    for k, layer in enumerate(plan.layers):
        if k > 0:
            clock += hop
        duration = max(env.processing_time(by_id[sid]) for sid in layer)
        schedule.append((clock, clock + duration))
        clock += duration
    return schedule, clock + env.edge_cost_ms


def simulate_latency(plan: CompositionPlan, env: SimEnv, mode: DataflowMode) -> float:
    """End-to-end latency of a layered plan under the transfer-cost model."""
    _, latency = _layer_schedule(plan, env, mode)
    return latency


def source_concepts(plan: CompositionPlan) -> set[Concept]:
    return {edge.concept for edge in plan.edges if edge.producer == SOURCE}


def execute_plan(
    plan: CompositionPlan,
    inputs: Mapping[Concept, Any],
    env: SimEnv,
    mode: DataflowMode = DataflowMode.DECENTRALIZED,
) -> ExecutionResult:
    """Run the plan, moving values along its edges.

    Output values do not depend on ``mode``; only latency does.

    Raises:
        MissingInputError: If a consumed SOURCE concept has no input value
        ServiceDownError: If a node is DOWN before or when it is due to start
    """
    missing = source_concepts(plan) - set(inputs)
    if missing:
        raise MissingInputError(missing)
    for node in plan.nodes:
        if node.id in env.faults:
            raise ServiceDownError(node.id)
    env.ensure(plan)

    by_id = {node.id: node for node in plan.nodes}
    incoming: dict[str, list[tuple[str, Concept]]] = {}
    for edge in plan.edges:
        incoming.setdefault(edge.consumer, []).append((edge.producer, edge.concept))
    produced: dict[str, Mapping[Concept, Any]] = {SOURCE: dict(inputs)}

    def value_of(producer: str, concept: Concept, consumer: str) -> Any:
        values = produced.get(producer, {})
        if concept not in values:
            raise MissingInputError([concept], consumer)
        return values[concept]

    schedule, latency = _layer_schedule(plan, env, mode)
    trace: list[TraceEvent] = []
    for (start, _), layer in zip(schedule, plan.layers):
        for sid in layer:
            if env.is_down(sid, start):
                logger.warning(
                    f"Service {sid} is down at t={start}ms, aborting execution"
                )
                raise ServiceDownError(sid)
            trace.append(TraceEvent(start, sid, "start"))
        for sid in layer:
            node = by_id[sid]
            args = {
                concept: value_of(p, concept, sid)
                for p, concept in incoming.get(sid, [])
            }
            produced[sid] = dict(env.behaviors[sid](args))
            trace.append(TraceEvent(start + env.processing_time(node), sid, "finish"))
    outputs = {
        concept: value_of(producer, concept, SINK)
        for producer, concept in sorted(incoming.get(SINK, []), key=lambda pc: pc[1])
    }
    trace.sort(key=lambda e: (e.time_ms, e.kind != "start", e.service_id))
    logger.debug(f"Executed plan {list(plan.node_ids)} in {latency}ms ({mode.value})")
    return ExecutionResult(outputs, latency, mode, tuple(trace))


def plan_health_check(
    plan: CompositionPlan, env: SimEnv, fallback: Sequence[ScoredPlan] = ()
) -> CompositionPlan:
    """First plan among ``plan`` then ``fallback`` whose nodes are all UP.

    Raises:
        NoHealthyPlanError: If every option uses a DOWN service
    """
    down = set(env.faults)
    for option in [plan, *(scored.plan for scored in fallback)]:
        if not down.intersection(option.node_ids):
            if option is not plan:
                logger.info(
                    f"Re-selected plan {list(option.node_ids)} around down services"
                )
            return option
    raise NoHealthyPlanError(down.intersection(
        sid for option in [plan, *(s.plan for s in fallback)] for sid in option.node_ids
    ))


def latency_lower_bound(plan: CompositionPlan, env: SimEnv) -> float:
    """Sum over layers of the slowest processing time."""
    by_id = {node.id: node for node in plan.nodes}
    return math.fsum(
        max(env.processing_time(by_id[s]) for s in layer) for layer in plan.layers
    )
