"""Turns the selected candidate into the final executable plan."""

from __future__ import annotations

import logging
from typing import Iterable

from .evaluator import ScoredPlan, aggregate_qos
from .model import DEFAULT_THROUGHPUT_MAX_RPS, SINK, CompositionPlan, Concept, Request
from .plans import build_plan, contributing_nodes, stratify, wire_edges

logger = logging.getLogger(__name__)


def prune_plan(plan: CompositionPlan, request: Request) -> CompositionPlan:
    """Remove nodes with no wired path to a desired concept, to a fixed point."""
    current = plan
    while True:
        keep = contributing_nodes(current)
        if len(keep) == len(current.nodes):
            return current
        dropped = sorted(set(current.node_ids) - keep)
        logger.debug(f"Pruning non-contributing services {dropped}")
        current = build_plan(
            (n for n in current.nodes if n.id in keep),
            request.provided,
            request.desired,
        )


def sink_concepts(plan: CompositionPlan) -> set[Concept]:
    return {edge.concept for edge in plan.edges if edge.consumer == SINK}


def layer_plan(plan: CompositionPlan, provided: Iterable[Concept]) -> CompositionPlan:
    """Recompute the ASAP layering and rewire edges to match it.

    Raises:
        CycleError: If the nodes cannot be stratified
    """
    have = set(provided)
    layers = stratify(plan.nodes, have)
    edges = wire_edges(plan.nodes, layers, have, sink_concepts(plan))
    return CompositionPlan(
        nodes=plan.nodes,
        edges=edges,
        layers=tuple(tuple(layer) for layer in layers),
        aggregate=plan.aggregate,
    )


def compose(
    best: ScoredPlan,
    request: Request,
    throughput_max_rps: float = DEFAULT_THROUGHPUT_MAX_RPS,
) -> CompositionPlan:
    """Prune, layer and aggregate the winning plan."""
    pruned = prune_plan(best.plan, request)
    if pruned.is_empty:
        layered = CompositionPlan.empty(request.provided, request.desired)
    else:
        layered = layer_plan(pruned, request.provided)
    final = layered.with_aggregate(aggregate_qos(layered, throughput_max_rps))
    logger.debug(f"Composed plan {[list(layer) for layer in final.layers]}")
    return final
