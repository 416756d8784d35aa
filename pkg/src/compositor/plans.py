"""Graph helpers for composition plans: layering, edge wiring and validity."""

from __future__ import annotations

import logging
from typing import Iterable, Sequence

from .errors import CycleError
from .model import SINK, SOURCE, CompositionPlan, Concept, Edge, ServiceDescription

logger = logging.getLogger(__name__)


def stratify(
    nodes: Iterable[ServiceDescription], provided: Iterable[Concept]
) -> list[list[str]]:
    """ASAP layering: each node lands in the first layer its inputs allow.

    Layer ``k`` only reads ``provided`` and outputs of layers ``< k``.

    Raises:
        CycleError: If some nodes can never be scheduled
    """
    known = set(provided)
    remaining = {node.id: node for node in nodes}
    layers: list[list[str]] = []
    while remaining:
        ready = sorted(
            sid for sid, node in remaining.items() if set(node.inputs) <= known
        )
        if not ready:
            missing = set().union(*(set(n.inputs) for n in remaining.values())) - known
            raise CycleError(remaining, missing)
        for sid in ready:
            known.update(remaining.pop(sid).outputs)
        layers.append(ready)
    return layers


def _producer_index(
    nodes: Sequence[ServiceDescription], layer_of: dict[str, int]
) -> dict[Concept, list[tuple[int, str]]]:
    producers: dict[Concept, list[tuple[int, str]]] = {}
    for node in nodes:
        for concept in node.outputs:
            producers.setdefault(concept, []).append((layer_of[node.id], node.id))
    for entries in producers.values():
        entries.sort()
    return producers


def wire_edges(
    nodes: Sequence[ServiceDescription],
    layers: Sequence[Sequence[str]],
    provided: Iterable[Concept],
    desired: Iterable[Concept],
) -> frozenset[Edge]:
    """Connect each consumed concept to its earliest producer.

    SOURCE wins whenever it holds the concept; otherwise the producer in the
    earliest layer feeds the consumer, ties going to the smallest id. Concepts
    with no eligible producer are left unwired.
    """
    have = set(provided)
    layer_of = {sid: k for k, layer in enumerate(layers) for sid in layer}
    producers = _producer_index(nodes, layer_of)
    edges: set[Edge] = set()
    for node in nodes:
        for concept in node.inputs:
            if concept in have:
                edges.add(Edge(SOURCE, node.id, concept))
                continue
            earlier = [
                p for p in producers.get(concept, []) if p[0] < layer_of[node.id]
            ]
            if earlier:
                edges.add(Edge(earlier[0][1], node.id, concept))
    for concept in desired:
        if concept in have:
            edges.add(Edge(SOURCE, SINK, concept))
        elif concept in producers:
            edges.add(Edge(producers[concept][0][1], SINK, concept))
    return frozenset(edges)


def build_plan(
    nodes: Iterable[ServiceDescription],
    provided: Iterable[Concept],
    desired: Iterable[Concept],
) -> CompositionPlan:
    """Layer and wire a node set into a plan (no aggregate attached)."""
    node_list = sorted(nodes, key=lambda s: s.id)
    provided_set = set(provided)
    layers = stratify(node_list, provided_set)
    edges = wire_edges(node_list, layers, provided_set, desired)
    return CompositionPlan(
        nodes=tuple(node_list),
        edges=edges,
        layers=tuple(tuple(layer) for layer in layers),
    )


def plan_violations(
    plan: CompositionPlan, provided: Iterable[Concept], desired: Iterable[Concept]
) -> list[str]:
    """List every way ``plan`` fails to be a valid composition for the goal.

    Checks that layers partition the nodes, that each node's inputs come from
    SOURCE or strictly earlier layers, that the desired concepts are covered,
    and that the edge set agrees with all of the above.
    """
    have = set(provided)
    wanted = set(desired)
    problems: list[str] = []
    node_ids = [node.id for node in plan.nodes]
    if len(node_ids) != len(set(node_ids)):
        problems.append("duplicate node ids")
    placed = [sid for layer in plan.layers for sid in layer]
    if sorted(placed) != sorted(set(node_ids)) or len(placed) != len(set(placed)):
        problems.append("layers do not partition the nodes")
        return problems
    if any(not layer for layer in plan.layers):
        problems.append("empty layer")
    layer_of = plan.layer_index()
    by_id = {node.id: node for node in plan.nodes}

    available_before: dict[int, set[Concept]] = {}
    known = set(have)
    for k, layer in enumerate(plan.layers):
        available_before[k] = set(known)
        for sid in layer:
            known.update(by_id[sid].outputs)
    for node in plan.nodes:
        missing = set(node.inputs) - available_before[layer_of[node.id]]
        if missing:
            problems.append(
                f"{node.id} inputs {sorted(missing)} not covered by earlier layers"
            )
    uncovered = wanted - known
    if uncovered:
        problems.append(f"desired {sorted(uncovered)} not covered")

    consumed: dict[tuple[str, Concept], int] = {}
    for edge in plan.edges:
        key = (edge.consumer, edge.concept)
        consumed[key] = consumed.get(key, 0) + 1
        if edge.producer == SOURCE:
            if edge.concept not in have:
                problems.append(f"SOURCE does not provide {edge.concept}")
        elif edge.producer not in by_id or (
            edge.concept not in by_id[edge.producer].outputs
        ):
            problems.append(f"{edge.producer} does not produce {edge.concept}")
            continue
        if edge.consumer == SINK:
            if edge.concept not in wanted:
                problems.append(f"SINK does not need {edge.concept}")
            continue
        consumer = by_id.get(edge.consumer)
        if consumer is None or edge.concept not in consumer.inputs:
            problems.append(f"{edge.consumer} does not consume {edge.concept}")
            continue
        if edge.producer != SOURCE and (
            layer_of[edge.producer] >= layer_of[edge.consumer]
        ):
            problems.append(
                f"edge {edge.producer}->{edge.consumer} does not go forward"
            )
    for node in plan.nodes:
        for concept in node.inputs:
            if consumed.get((node.id, concept), 0) != 1:
                problems.append(f"{node.id} input {concept} is not wired exactly once")
    for concept in wanted:
        if consumed.get((SINK, concept), 0) != 1:
            problems.append(f"desired {concept} is not wired to SINK exactly once")
    return problems


def is_valid_plan(
    plan: CompositionPlan, provided: Iterable[Concept], desired: Iterable[Concept]
) -> bool:
    return not plan_violations(plan, provided, desired)


def contributing_nodes(plan: CompositionPlan) -> set[str]:
    """Ids of nodes with a wired path to SINK."""
    feeds: dict[str, set[str]] = {}
    for edge in plan.edges:
        feeds.setdefault(edge.consumer, set()).add(edge.producer)
    reached: set[str] = set()
    frontier = [SINK]
    while frontier:
        current = frontier.pop()
        for producer in feeds.get(current, ()):
            if producer != SOURCE and producer not in reached:
                reached.add(producer)
                frontier.append(producer)
    return reached
