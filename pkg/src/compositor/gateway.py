"""The translator and the end-to-end composition pipeline.

``handle_request`` runs one request through translation, matching, the two
evaluation stages, composition and execution, then renders the response.
Every outcome, including malformed input, comes back as rendered JSON.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    StrictFloat,
    StrictInt,
    StrictStr,
    ValidationError,
)

from .clock import SimClock
from .composer import compose
from .config import CompositorConfig
from .errors import CompositorError, NoFeasibleError, ParseError, ValidationFailedError
from .evaluator import (
    filter_functionality,
    filter_interface,
    rank_candidates,
    score_candidates,
)
from .execution import (
    DataflowMode,
    ExecutionResult,
    SimEnv,
    execute_plan,
    plan_health_check,
    source_concepts,
)
from .matchmaker import lookup
from .metrics import MetricsRecorder
from .model import (
    CacheEntry,
    CompositionPlan,
    Constraint,
    ConstraintOp,
    Metrics,
    QoSBounds,
    Request,
    ServiceDescription,
    Stage,
    equal_weights,
)
from .registry import Registry, RegistryLike, sync_round
from .serialization import (
    as_float,
    canonical_json,
    load_json_document,
    plan_to_document,
    pydantic_parse_error,
    qos_to_document,
)
from .validation import validate_request
from .wsdb import Health, ReplicaSet

logger = logging.getLogger(__name__)

Number = Union[StrictInt, StrictFloat]


class ConstraintDoc(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    attribute: StrictStr
    op: Literal["<=", ">=", "=", "!="]
    literal: Union[Number, StrictStr]


class BoundsDoc(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)

    max_response_time_ms: Optional[Number] = None
    max_cost: Optional[Number] = None
    min_availability: Optional[Number] = None
    min_reliability: Optional[Number] = None
    min_throughput_rps: Optional[Number] = None


class ExternalRequest(BaseModel):
    """Requester-facing request document."""

    model_config = ConfigDict(extra="forbid", strict=True)

    provided: List[StrictStr] = []
    desired: List[StrictStr]
    category: Optional[StrictStr] = None
    constraints: List[ConstraintDoc] = []
    weights: Optional[Dict[StrictStr, Number]] = None
    bounds: BoundsDoc = BoundsDoc()
    correlation_id: Optional[StrictStr] = None
    inputs: Optional[Dict[StrictStr, Any]] = None


def _literal(value: Union[int, float, str], field: str) -> Union[float, str]:
    return value if isinstance(value, str) else as_float(value, field)


def request_from_document(document: Any) -> Request:
    """Translate a decoded request document into the internal Request.

    Raises:
        ParseError: On schema violations, with the field path
        ValidationFailedError: On Request invariant violations
    """
    if not isinstance(document, dict):
        raise ParseError("request must be a JSON object")
    try:
        doc = ExternalRequest.model_validate(document)
    except ValidationError as e:
        raise pydantic_parse_error(e) from e
    bounds = QoSBounds(
        **{
            name: as_float(value, f"bounds.{name}")
            for name, value in doc.bounds.model_dump().items()
            if value is not None
        }
    )
    request = Request(
        provided=frozenset(doc.provided),
        desired=frozenset(doc.desired),
        category_requirement=doc.category,
        constraints=tuple(
            Constraint(
                c.attribute,
                ConstraintOp(c.op),
                _literal(c.literal, f"constraints.{i}.literal"),
            )
            for i, c in enumerate(doc.constraints)
        ),
        weights=(
            {name: as_float(w, f"weights.{name}") for name, w in doc.weights.items()}
            if doc.weights is not None
            else equal_weights()
        ),
        bounds=bounds,
        correlation_id=doc.correlation_id,
        inputs=dict(doc.inputs) if doc.inputs is not None else {},
    )
    report = validate_request(request)
    report.raise_if_invalid()
    return request


def parse_request(text: bytes | str) -> Request:
    """Parse an external request document.

    Omitted weights default to equal weights over all five QoS attributes;
    omitted bounds mean no hard limits.

    Raises:
        ParseError: Malformed JSON or schema violations
        ValidationFailedError: E.g. an empty ``desired`` list
    """
    try:
        return request_from_document(load_json_document(text))
    except RecursionError as e:
        raise ParseError("document nested too deeply") from e


@dataclass(frozen=True)
class PipelineResult:
    plan: CompositionPlan
    metrics: Metrics
    correlation_id: str | None = None
    execution: ExecutionResult | None = None


def render_response(
    outcome: PipelineResult | CompositorError, correlation_id: str | None = None
) -> str:
    """Canonical JSON for a pipeline result or an error.

    Only deterministic metrics are included (counters and the stage trace), so
    identical runs render byte-identical responses.
    """
    if isinstance(outcome, CompositorError):
        document: dict[str, Any] = outcome.to_dict()
        if correlation_id is not None:
            document["correlation_id"] = correlation_id
        return canonical_json(document)
    document = {}
    if outcome.correlation_id is not None:
        document["correlation_id"] = outcome.correlation_id
    document["plan"] = plan_to_document(outcome.plan)
    aggregate = outcome.plan.aggregate
    document["aggregate_qos"] = qos_to_document(aggregate) if aggregate else None
    if outcome.execution is not None:
        document["outputs"] = dict(sorted(outcome.execution.outputs.items()))
        document["latency_ms"] = outcome.execution.latency_ms
        document["mode"] = outcome.execution.mode.value
    document["metrics"] = {
        "wsdb_hits": outcome.metrics.wsdb_hits,
        "registry_fetches": outcome.metrics.registry_fetches,
        "event_trace": outcome.metrics.trace_names(),
    }
    return canonical_json(document)


class CompositionSystem:
    """Everything one pipeline run needs: clock, registries, WSDB and faults.

    Args:
        config: Effective configuration
        registries: Local or remote registries consulted on WSDB misses
        replica_set: WSDB replicas (created from ``config`` when omitted)
        clock: Simulated clock (starts at 0 when omitted)
    """

    def __init__(
        self,
        config: CompositorConfig | None = None,
        registries: Sequence[RegistryLike] = (),
        replica_set: ReplicaSet | None = None,
        clock: SimClock | None = None,
    ) -> None:
        self.config = config or CompositorConfig()
        self.clock = clock or SimClock()
        self.registries: list[RegistryLike] = list(registries)
        self.replica_set = replica_set or ReplicaSet.create(
            self.config.replica_count, self.config.replica_journal_dir
        )
        self.service_faults: set[str] = set()
        self.metrics = MetricsRecorder()
        self.next_sync_at = self.clock.now() + self.config.sync_interval_s

    @classmethod
    def from_catalog(
        cls,
        catalog: Iterable[ServiceDescription],
        config: CompositorConfig | None = None,
        registry_ids: Sequence[str] = ("R1",),
        warm: bool = False,
    ) -> CompositionSystem:
        """A system whose first registry holds ``catalog``; others start empty."""
        services = list(catalog)
        registries = [Registry(registry_ids[0], services)]
        registries += [Registry(rid) for rid in registry_ids[1:]]
        system = cls(config, registries)
        if warm:
            system.warm_cache(services)
        return system

    @property
    def local_registries(self) -> list[Registry]:
        return [r for r in self.registries if isinstance(r, Registry)]

    def registry(self, registry_id: str) -> Registry:
        for registry in self.local_registries:
            if registry.registry_id == registry_id:
                return registry
        raise KeyError(registry_id)

    def now(self) -> int:
        return self.clock.now()

    def warm_cache(
        self, services: Iterable[ServiceDescription], ttl_s: int | None = None
    ) -> None:
        """Write services into every UP replica, stamped with the current time."""
        now = self.now()
        ttl = ttl_s if ttl_s is not None else self.config.wsdb_ttl_s
        self.replica_set.write_all([CacheEntry(s, now, ttl) for s in services], now)

    def sync_registries(self) -> int:
        return sync_round(self.local_registries, now=self.now())

    def _catalogs(self) -> list[dict[str, ServiceDescription]]:
        return [dict(r.state.catalog) for r in self.local_registries]

    def advance(self, seconds: int) -> int:
        """Advance the clock, syncing the registries at every interval boundary.

        Once a round leaves every catalog unchanged the rounds in between
        are no-ops, so the schedule jumps to the last boundary before the
        target and runs that round only.
        """
        target = self.clock.now() + seconds
        interval = self.config.sync_interval_s
        while self.next_sync_at <= target:
            before = self._catalogs()
            self.clock.set(self.next_sync_at)
            merges = sync_round(self.local_registries, now=self.next_sync_at)
            logger.debug(f"Scheduled sync at t={self.next_sync_at}: {merges} merges")
            self.next_sync_at += interval
            if self._catalogs() == before and self.next_sync_at <= target:
                skipped = (target - self.next_sync_at) // interval
                self.next_sync_at += skipped * interval
        return self.clock.set(target)

    def set_fault(self, target: str, down: bool) -> None:
        """Mark ``service:<id>``, ``replica:<n>`` or ``registry:<id>`` DOWN or UP.

        Replicas are numbered from 1.

        Raises:
            ValidationFailedError: If the target is malformed or names nothing known
        """
        kind, sep, name = target.partition(":")
        if not sep or not name:
            raise ValidationFailedError([("target", "kind:name")])
        if kind == "service":
            if down:
                self.service_faults.add(name)
            else:
                self.service_faults.discard(name)
        elif kind == "replica":
            count = len(self.replica_set)
            if not name.isdigit() or not 1 <= int(name) <= count:
                raise ValidationFailedError(
                    [("target", f"replica index in 1..{count}")]
                )
            health = Health.DOWN if down else Health.UP
            self.replica_set[int(name) - 1].set_health(health)
        elif kind == "registry":
            try:
                self.registry(name).available = not down
            except KeyError:
                raise ValidationFailedError(
                    [("target", f"known registry id, got {name}")]
                ) from None
        else:
            raise ValidationFailedError(
                [("target", "kind is service, replica or registry")]
            )
        logger.info(f"{target} marked {'DOWN' if down else 'UP'}")

    def sim_env(self) -> SimEnv:
        return SimEnv(
            edge_cost_ms=self.config.latency.edge_cost_ms,
            coordinator_overhead_ms=self.config.latency.coordinator_overhead_ms,
            faults=set(self.service_faults),
        )


def _placeholder_inputs(request: Request, plan: CompositionPlan) -> dict[str, Any]:
    if request.inputs:
        return dict(request.inputs)
    return {concept: concept for concept in source_concepts(plan)}


def run_pipeline(
    request: Request,
    system: CompositionSystem,
    now: int,
    metrics: Metrics,
    execute: bool = True,
    mode: DataflowMode = DataflowMode.DECENTRALIZED,
) -> PipelineResult:
    """Matching through execution for an already translated request.

    Stage tags are appended to ``metrics`` as each stage starts.
    """
    config = system.config
    candidates, _ = lookup(
        request,
        system.replica_set,
        system.registries,
        now,
        config.limits,
        config.wsdb_ttl_s,
        delta=metrics,
    )

    metrics.record(Stage.EVALUATE_INTERFACE)
    plans = filter_interface(candidates.plans, request)
    if not plans:
        raise NoFeasibleError("no candidate passes interface evaluation")

    metrics.record(Stage.EVALUATE_FUNCTIONALITY)
    plans = filter_functionality(plans, request)
    if not plans:
        raise NoFeasibleError("no candidate satisfies the functionality requirements")
    ranked = rank_candidates(
        score_candidates(
            plans, request.weights, request.bounds, config.throughput_max_rps
        )
    )

    metrics.record(Stage.COMPOSE)
    final = compose(ranked[0], request, config.throughput_max_rps)

    metrics.record(Stage.EXECUTE)
    env = system.sim_env()
    chosen = plan_health_check(final, env, ranked[1:])
    if chosen is not final:
        replacement = next(s for s in ranked[1:] if s.plan is chosen)
        final = compose(replacement, request, config.throughput_max_rps)
    execution = None
    if execute:
        execution = execute_plan(final, _placeholder_inputs(request, final), env, mode)
    return PipelineResult(final, metrics, request.correlation_id, execution)


def handle_request(
    text: bytes | str,
    system: CompositionSystem,
    now: int | None = None,
    execute: bool = True,
    mode: DataflowMode = DataflowMode.DECENTRALIZED,
) -> tuple[str, Metrics]:
    """Run one external request end to end.

    Returns:
        The rendered response (success or error) and the request's metrics
    """
    now = system.now() if now is None else now
    metrics = Metrics()
    correlation_id: str | None = None
    started = time.perf_counter()
    error_code: str | None = None
    try:
        metrics.record(Stage.TRANSLATE_IN)
        request = parse_request(text)
        correlation_id = request.correlation_id
        result = run_pipeline(request, system, now, metrics, execute, mode)
        metrics.record(Stage.TRANSLATE_OUT)
        response = render_response(result)
    except CompositorError as e:
        error_code = e.code
        logger.info(f"Request failed with {e.code}: {e.message}")
        response = render_response(e, correlation_id)
    except Exception as e:
        logger.exception(f"Unexpected failure while handling request: {e}")
        internal = CompositorError("internal error", {"message": str(e)})
        error_code = internal.code
        response = render_response(internal, correlation_id)
    metrics.composition_time_ms = (time.perf_counter() - started) * 1000.0
    system.metrics.record(metrics, error_code)
    return response, metrics


def handle_document(
    document: Any,
    system: CompositionSystem,
    execute: bool = True,
    mode: DataflowMode = DataflowMode.DECENTRALIZED,
) -> tuple[Dict[str, Any], Metrics]:
    """``handle_request`` for a decoded request, returning a decoded response."""
    try:
        text = canonical_json(document)
    except (TypeError, ValueError) as e:
        error = ParseError(f"request is not JSON-serializable: {e}")
        return error.to_dict(), Metrics(event_trace=[Stage.TRANSLATE_IN])
    response, metrics = handle_request(text, system, execute=execute, mode=mode)
    return load_json_document(response), metrics

