"""Tests for interface/functionality filtering and QoS selection."""

import itertools
import random
from dataclasses import replace

import pytest

from compositor.errors import CycleError, NoCompositionError, NoFeasibleError, ValidationFailedError
from compositor.evaluator import (
    aggregate_qos,
    filter_functionality,
    filter_interface,
    normalized_weights,
    rank_candidates,
    score_candidates,
    select_best,
)
from compositor.matchmaker import SearchLimits, generate_candidates, is_minimal
from compositor.model import (
    LOWER_IS_BETTER,
    QOS_ATTRIBUTES,
    CompositionPlan,
    Constraint,
    ConstraintOp,
    QoSBounds,
    QoSVector,
    Request,
)
from compositor.plans import build_plan

from tests.conftest import make_service


class TestFilters:
    """Test the two evaluation stages."""

    def test_interface_drops_invalid(self, cat1, r1, cat1_by_id):
        """Test a plan that cannot deliver C is dropped."""
        broken = build_plan([cat1_by_id["S4"]], r1.provided, {"D"})
        plans = generate_candidates(cat1, r1) + [broken]
        assert broken not in filter_interface(plans, r1)
        assert len(filter_interface(plans, r1)) == 2

    def test_category_requirement(self, cat1, r2):
        """Test every node must sit under the required category."""
        request = replace(r2, category_requirement="demo/convert")
        assert filter_functionality(generate_candidates(cat1, r2), request) == []

    def test_constraint_on_region(self, cat1, r1):
        """Test region = eu keeps only the all-eu chain."""
        request = replace(r1, constraints=(Constraint("region", ConstraintOp.EQ, "eu"),))
        kept = filter_functionality(generate_candidates(cat1, r1), request)
        assert [list(p.node_ids) for p in kept] == [["S1", "S2"]]

    def test_numeric_constraint(self, cat1, r1):
        """Test price <= 15 excludes S2 (price 20)."""
        request = replace(r1, constraints=(Constraint("price", ConstraintOp.LE, 15),))
        kept = filter_functionality(generate_candidates(cat1, r1), request)
        assert [list(p.node_ids) for p in kept] == [["S3"]]

    def test_missing_attribute_fails_closed(self, cat1, r1):
        """Test a constraint on an undeclared attribute rejects the node."""
        request = replace(r1, constraints=(Constraint("vendor", ConstraintOp.NE, "acme"),))
        assert filter_functionality(generate_candidates(cat1, r1), request) == []


class TestAggregate:
    """Test structure-based QoS aggregation."""

    def test_chain(self, cat1_by_id):
        """Test the S1→S2 chain aggregate."""
        plan = build_plan([cat1_by_id["S1"], cat1_by_id["S2"]], {"A"}, {"C"})
        qos = aggregate_qos(plan)
        assert qos.response_time_ms == 30.0
        assert qos.cost == 3.0
        assert qos.availability == pytest.approx(0.9702)
        assert qos.reliability == pytest.approx(0.9702)
        assert qos.throughput_rps == 50.0

    def test_parallel_layer_takes_slowest(self, cat1_by_id):
        """Test a layer costs its slowest node."""
        nodes = [cat1_by_id[s] for s in ("S1", "S2", "S4")]
        qos = aggregate_qos(build_plan(nodes, {"A"}, {"C", "D"}))
        assert qos.response_time_ms == 35.0
        assert qos.cost == 4.0

    def test_empty_plan(self):
        """Test the empty plan aggregate uses the throughput ceiling."""
        qos = aggregate_qos(CompositionPlan.empty({"A"}, {"A"}), throughput_max_rps=500.0)
        assert (qos.response_time_ms, qos.cost, qos.availability, qos.throughput_rps) == (0, 0, 1, 500.0)


class TestScoring:
    """Test normalization, bounds and selection."""

    def test_r1_prefers_faster_chain(self, cat1, r1):
        """Test response-time-only weights select S1→S2 (30ms) over S3 (50ms)."""
        best = select_best(score_candidates(generate_candidates(cat1, r1), r1.weights))
        assert list(best.plan.node_ids) == ["S1", "S2"]
        assert best.score == 1.0

    def test_cost_weight_prefers_s3(self, cat1, r1):
        """Test cost-only weights select the single cheaper service."""
        best = select_best(score_candidates(generate_candidates(cat1, r1), {"cost": 1.0}))
        assert list(best.plan.node_ids) == ["S3"]

    def test_tie_prefers_fewer_nodes(self):
        """Test equal scores fall back to node count, then ids."""
        catalog = [
            make_service("S1", inputs=("A",), outputs=("B",), response_time_ms=5),
            make_service("S2", inputs=("B",), outputs=("C",), response_time_ms=5),
            make_service("S3", inputs=("A",), outputs=("C",), response_time_ms=10),
        ]
        request = Request(frozenset({"A"}), frozenset({"C"}), weights={"response_time_ms": 1.0})
        best = select_best(score_candidates(generate_candidates(catalog, request), request.weights))
        assert list(best.plan.node_ids) == ["S3"]

    def test_bounds_drop_plans(self, cat1, r1):
        """Test a cost bound removes the 3.0-cost chain."""
        scored = score_candidates(generate_candidates(cat1, r1), r1.weights, QoSBounds(max_cost=2.0))
        assert [list(s.plan.node_ids) for s in scored] == [["S3"]]

    def test_no_feasible(self, cat1, r1):
        """Test NO_FEASIBLE when every plan breaks a bound."""
        with pytest.raises(NoFeasibleError):
            score_candidates(generate_candidates(cat1, r1), r1.weights, QoSBounds(min_availability=0.999))

    def test_zero_weights_rejected(self):
        """Test weights must have a positive sum."""
        with pytest.raises(ValidationFailedError):
            normalized_weights({"cost": 0.0})

    def test_scores_in_unit_interval(self, cat1, r2):
        """Test every score lies in [0, 1] with equal weights."""
        for scored in score_candidates(generate_candidates(cat1, r2), r2.weights | {"cost": 1.0}):
            assert 0.0 <= scored.score <= 1.0

    def test_selection_is_optimal_on_random_catalogs(self):
        """Test the selected plan scores at least as well as every candidate."""
        rng = random.Random(99)
        concepts = ["A", "B", "C", "D", "E"]
        checked = 0
        for _ in range(200):
            catalog = []
            for i in range(rng.randint(2, 7)):
                inputs = rng.sample(concepts, rng.randint(0, 2))
                outputs = rng.sample([c for c in concepts if c not in inputs], 1)
                catalog.append(make_service(
                    f"S{i}", inputs=inputs, outputs=outputs,
                    response_time_ms=rng.randint(1, 50), cost=rng.randint(0, 9),
                    availability=rng.uniform(0.8, 1.0), throughput_rps=rng.randint(1, 100),
                ))
            weights = {name: rng.random() + 0.01 for name in ("response_time_ms", "cost", "availability")}
            request = Request(frozenset({"A"}), frozenset({"E"}), weights=weights)
            try:
                plans = generate_candidates(catalog, request, SearchLimits(exhaustive=True))
            except NoCompositionError:
                continue
            scored = score_candidates(plans, weights)
            best = select_best(scored)
            assert all(best.score >= other.score for other in scored)
            assert rank_candidates(scored)[0] == best
            checked += 1
        assert checked > 0


def random_services(rng, concepts, size):
    """Services with random interfaces, categories, prices and QoS."""
    services = []
    for index in range(size):
        inputs = rng.sample(concepts, rng.randint(0, 2))
        outputs = rng.sample([c for c in concepts if c not in inputs], 1)
        services.append(make_service(
            f"S{index}", inputs=inputs, outputs=outputs,
            response_time_ms=rng.randint(1, 50), cost=rng.randint(0, 9),
            availability=rng.randint(80, 100) / 100, reliability=rng.randint(80, 100) / 100,
            throughput_rps=rng.randint(1, 100),
            category=rng.choice(["demo", "demo/convert", "other"]),
            attributes={"price": rng.randint(1, 20), "region": rng.choice(["eu", "us"])},
        ))
    return services


def brute_force_best_score(catalog, request):
    """Highest weighted min-max score over every minimal node set, or None."""
    plans = []
    for size in range(1, len(catalog) + 1):
        for subset in itertools.combinations(catalog, size):
            if is_minimal(list(subset), set(request.provided), set(request.desired)):
                plans.append(build_plan(subset, request.provided, request.desired))
    if not plans:
        return None
    vectors = [aggregate_qos(plan).as_dict() for plan in plans]
    total = sum(request.weights.values())
    best = 0.0
    for vector in vectors:
        score = 0.0
        for name, weight in request.weights.items():
            values = [v[name] for v in vectors]
            low, high = min(values), max(values)
            if high == low:
                utility = 1.0
            elif name in LOWER_IS_BETTER:
                utility = (high - vector[name]) / (high - low)
            else:
                utility = (vector[name] - low) / (high - low)
            score += weight / total * utility
        best = max(best, score)
    return best


def affine(vector, scale, shift):
    return QoSVector(**{name: scale * value + shift for name, value in vector.as_dict().items()})


class TestSelectionProperties:
    """Test selection and filtering on random catalogs."""

    def test_selection_matches_brute_force(self):
        """Test the selected score equals the best score over every minimal subset."""
        rng = random.Random(4242)
        concepts = ["A", "B", "C", "D", "E"]
        checked = 0
        for _ in range(150):
            catalog = random_services(rng, concepts, rng.randint(2, 6))
            weights = {name: float(rng.randint(1, 5)) for name in ("response_time_ms", "cost", "availability")}
            request = Request(frozenset({"A"}), frozenset({"E"}), weights=weights)
            expected = brute_force_best_score(catalog, request)
            try:
                plans = generate_candidates(catalog, request, SearchLimits(exhaustive=True))
            except NoCompositionError:
                assert expected is None
                continue
            assert select_best(score_candidates(plans, weights)).score == pytest.approx(expected)
            checked += 1
        assert checked > 20

    def test_selection_invariant_under_affine_rescaling(self):
        """Test x -> a*x + b on every aggregate keeps the ranking and the scores."""
        rng = random.Random(31)
        for _ in range(300):
            plans = [
                build_plan([make_service(f"S{i}", inputs=("A",), outputs=("C",))], {"A"}, {"C"})
                .with_aggregate(QoSVector(
                    response_time_ms=rng.randint(1, 200), cost=rng.randint(0, 40),
                    availability=rng.randint(32, 64) / 64, reliability=rng.randint(32, 64) / 64,
                    throughput_rps=rng.randint(1, 500),
                ))
                for i in range(rng.randint(1, 6))
            ]
            weights = {name: float(rng.randint(0, 4)) for name in QOS_ATTRIBUTES}
            weights["cost"] += 1.0
            scale = rng.choice([0.5, 1.0, 2.0, 4.0])
            shift = rng.randint(-16, 16) / 8
            rescaled = [plan.with_aggregate(affine(plan.aggregate, scale, shift)) for plan in plans]
            before = rank_candidates(score_candidates(plans, weights))
            after = rank_candidates(score_candidates(rescaled, weights))
            assert [s.plan.node_ids for s in after] == [s.plan.node_ids for s in before]
            assert [s.score for s in after] == [s.score for s in before]

    def test_filters_commute(self):
        """Test interface and functionality filtering give the same survivors in either order."""
        rng = random.Random(8080)
        concepts = ["A", "B", "C", "D"]
        for _ in range(200):
            catalog = random_services(rng, concepts, rng.randint(2, 6))
            request = Request(
                frozenset({"A"}), frozenset({"D"}),
                category_requirement=rng.choice([None, "demo", "other"]),
                constraints=tuple(rng.sample([
                    Constraint("price", ConstraintOp.LE, float(rng.randint(1, 20))),
                    Constraint("region", ConstraintOp.EQ, rng.choice(["eu", "us"])),
                ], rng.randint(0, 2))),
            )
            plans = []
            for _ in range(8):
                subset = rng.sample(catalog, rng.randint(1, len(catalog)))
                try:
                    plans.append(build_plan(subset, request.provided, rng.choice([{"D"}, {"C"}])))
                except CycleError:
                    continue
            assert filter_functionality(filter_interface(plans, request), request) == filter_interface(
                filter_functionality(plans, request), request
            )
