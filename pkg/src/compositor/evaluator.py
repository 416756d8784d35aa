"""Two-stage candidate evaluation and QoS-based selection.

Interface filtering keeps structurally valid plans. Functionality filtering
applies the category requirement and attribute constraints to every node.
Survivors are aggregated, checked against hard bounds, min-max normalized
across the candidate set and scored by the request's weights.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import NoFeasibleError, ValidationFailedError
from .model import (
    DEFAULT_THROUGHPUT_MAX_RPS,
    LOWER_IS_BETTER,
    QOS_ATTRIBUTES,
    CompositionPlan,
    QoSBounds,
    QoSVector,
    Request,
    ServiceDescription,
    category_matches,
)
from .plans import is_valid_plan

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScoredPlan:
    plan: CompositionPlan
    utilities: Mapping[str, float]
    score: float

    def rank_key(self) -> tuple[float, int, list[str]]:
        return (-self.score, len(self.plan.nodes), list(self.plan.node_ids))


def filter_interface(
    plans: Iterable[CompositionPlan], request: Request
) -> list[CompositionPlan]:
    return [p for p in plans if is_valid_plan(p, request.provided, request.desired)]


def node_meets_functionality(node: ServiceDescription, request: Request) -> bool:
    """Category prefix and closed-world attribute constraints for one node."""
    if request.category_requirement is not None and not category_matches(
        node.functionality.category, request.category_requirement
    ):
        return False
    attributes = node.functionality.attribute_map
    for constraint in request.constraints:
        if constraint.attribute not in attributes:
            return False
        if not constraint.satisfied_by(attributes[constraint.attribute]):
            return False
    return True


def filter_functionality(
    plans: Iterable[CompositionPlan], request: Request
) -> list[CompositionPlan]:
    return [
        p for p in plans if all(node_meets_functionality(n, request) for n in p.nodes)
    ]


def aggregate_qos(
    plan: CompositionPlan, throughput_max_rps: float = DEFAULT_THROUGHPUT_MAX_RPS
) -> QoSVector:
    """Structure-based QoS of a layered plan.

    Response time sums the slowest node of each layer, cost sums, availability
    and reliability multiply, throughput takes the minimum. The empty plan is
    ``(0, 0, 1, 1, throughput_max_rps)``.
    """
    by_id = {node.id: node for node in plan.nodes}
    response_time = math.fsum(
        max(by_id[sid].qos.response_time_ms for sid in layer)
        for layer in plan.layers
        if layer
    )
    availability = 1.0
    reliability = 1.0
    for node in plan.nodes:
        availability *= node.qos.availability
        reliability *= node.qos.reliability
    return QoSVector(
        response_time_ms=response_time,
        cost=math.fsum(node.qos.cost for node in plan.nodes),
        availability=availability,
        reliability=reliability,
        throughput_rps=min(
            (node.qos.throughput_rps for node in plan.nodes), default=throughput_max_rps
        ),
    )


def normalized_weights(weights: Mapping[str, float]) -> dict[str, float]:
    total = math.fsum(weights.get(name, 0.0) for name in QOS_ATTRIBUTES)
    if not total > 0:
        raise ValidationFailedError([("weights", "weights sum > 0")])
    return {name: weights.get(name, 0.0) / total for name in QOS_ATTRIBUTES}


def _utility(attribute: str, value: float, low: float, high: float) -> float:
    if high == low:
        return 1.0
    if attribute in LOWER_IS_BETTER:
        return (high - value) / (high - low)
    return (value - low) / (high - low)


def score_candidates(
    plans: Sequence[CompositionPlan],
    weights: Mapping[str, float],
    bounds: QoSBounds | None = None,
    throughput_max_rps: float = DEFAULT_THROUGHPUT_MAX_RPS,
) -> list[ScoredPlan]:
    """Drop out-of-bounds plans, then score the rest in [0, 1].

    Plans without an aggregate get one computed here.

    Raises:
        NoFeasibleError: If no plan respects the bounds
    """
    share = normalized_weights(weights)
    bounds = bounds or QoSBounds()
    aggregated = [
        p
        if p.aggregate is not None
        else p.with_aggregate(aggregate_qos(p, throughput_max_rps))
        for p in plans
    ]
    feasible = []
    for plan in aggregated:
        assert plan.aggregate is not None
        broken = bounds.violations(plan.aggregate)
        if broken:
            logger.debug(f"Plan {list(plan.node_ids)} violates bounds {broken}")
        else:
            feasible.append(plan)
    if not feasible:
        reason = "all candidates violate QoS bounds" if plans else "no candidates"
        raise NoFeasibleError(reason)

    ranges = {}
    for name in QOS_ATTRIBUTES:
        values = [p.aggregate.get(name) for p in feasible if p.aggregate is not None]
        ranges[name] = (min(values), max(values))
    scored = []
    for plan in feasible:
        assert plan.aggregate is not None
        utilities = {
            name: _utility(name, plan.aggregate.get(name), *ranges[name])
            for name in QOS_ATTRIBUTES
        }
        raw = math.fsum(share[name] * utilities[name] for name in QOS_ATTRIBUTES)
        scored.append(ScoredPlan(plan, utilities, min(1.0, max(0.0, raw))))
    return scored


def rank_candidates(scored: Iterable[ScoredPlan]) -> list[ScoredPlan]:
    """Best first: score, then fewer nodes, then smallest sorted id list."""
    return sorted(scored, key=ScoredPlan.rank_key)


def select_best(scored: Sequence[ScoredPlan]) -> ScoredPlan:
    if not scored:
        raise NoFeasibleError("no candidates")
    return rank_candidates(scored)[0]
