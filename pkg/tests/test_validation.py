"""Tests for service and request validation."""

import math
from dataclasses import replace

import pytest

from compositor.errors import ValidationFailedError
from compositor.model import Constraint, ConstraintOp, QoSBounds, QoSVector, Request
from compositor.validation import is_token, validate_request, validate_service

from tests.conftest import make_service


class TestValidateService:
    """Test ServiceDescription invariants."""

    def test_cat1_services_are_valid(self, cat1):
        """Test every CAT-1 service passes validation."""
        for service in cat1:
            assert validate_service(service).ok

    def test_empty_outputs_rejected(self):
        """Test a service with no outputs is rejected."""
        report = validate_service(make_service("S1", outputs=()))
        assert "outputs non-empty" in report.rules()

    @pytest.mark.parametrize("availability", [0.0, 1.5, -0.1])
    def test_availability_outside_unit_interval(self, availability):
        """Test availability must lie in (0, 1]."""
        report = validate_service(make_service("S1", availability=availability))
        assert "availability ∉ (0,1]" in report.rules()

    def test_availability_of_one_accepted(self):
        """Test the closed upper end of the availability interval."""
        assert validate_service(make_service("S1", availability=1.0)).ok

    def test_negative_response_time_and_cost(self):
        """Test negative response time and cost are both reported."""
        report = validate_service(make_service("S1", response_time_ms=-1, cost=-2))
        assert "response_time_ms ≥ 0" in report.rules()
        assert "cost ≥ 0" in report.rules()

    def test_zero_throughput_rejected(self):
        """Test throughput must be strictly positive."""
        report = validate_service(make_service("S1", throughput_rps=0))
        assert "throughput_rps > 0" in report.rules()

    def test_nan_qos_rejected(self):
        """Test non-finite QoS values are rejected."""
        report = validate_service(make_service("S1", cost=math.nan))
        assert any(v.field == "qos.cost" for v in report.violations)

    def test_empty_category_segment(self):
        """Test a category path with an empty segment is rejected."""
        report = validate_service(make_service("S1", category="demo//convert"))
        assert "category segments non-empty" in report.rules()

    def test_id_with_whitespace(self):
        """Test ids must not contain whitespace."""
        report = validate_service(make_service("S 1"))
        assert "id non-empty, no whitespace" in report.rules()

    def test_negative_version(self):
        """Test versions must be non-negative integers."""
        report = validate_service(make_service("S1", version=-1))
        assert "version is a non-negative integer" in report.rules()

    def test_attribute_values_must_be_real_or_token(self):
        """Test attribute values that are neither numbers nor tokens."""
        report = validate_service(make_service("S1", attributes={"region": "two words"}))
        assert not report.ok
        assert report.violations[0].field == "functionality.attributes.region"

    def test_raise_if_invalid(self):
        """Test the report converts to a VALIDATION error listing every rule."""
        report = validate_service(make_service("S1", outputs=(), cost=-1))
        with pytest.raises(ValidationFailedError) as exc_info:
            report.raise_if_invalid()
        assert exc_info.value.code == "VALIDATION"
        rules = [v["rule"] for v in exc_info.value.detail["violations"]]
        assert "outputs non-empty" in rules
        assert "cost ≥ 0" in rules


class TestValidateRequest:
    """Test Request invariants."""

    def test_r1_is_valid(self, r1):
        """Test the R1 fixture request is valid."""
        assert validate_request(r1).ok

    def test_empty_desired(self):
        """Test a request must desire at least one concept."""
        report = validate_request(Request(frozenset({"A"}), frozenset()))
        assert "desired non-empty" in report.rules()

    def test_unknown_weight_attribute(self, r1):
        """Test weights naming unknown attributes are rejected."""
        report = validate_request(replace(r1, weights={"latency": 1.0}))
        assert report.violations[0].field == "weights.latency"

    def test_negative_weight(self, r1):
        """Test weights must be non-negative."""
        report = validate_request(replace(r1, weights={"cost": -1.0}))
        assert "weight must be a non-negative real" in report.rules()

    def test_zero_weight_sum(self, r1):
        """Test all-zero weights are rejected."""
        report = validate_request(replace(r1, weights={"cost": 0.0}))
        assert "weights sum > 0" in report.rules()

    def test_numeric_constraint_needs_number(self, r1):
        """Test <= and >= require numeric literals."""
        request = replace(r1, constraints=(Constraint("price", ConstraintOp.LE, "cheap"),))
        report = validate_request(request)
        assert report.violations[0].field == "constraints[0].literal"

    def test_non_finite_bound(self, r1):
        """Test bounds must be finite."""
        report = validate_request(replace(r1, bounds=QoSBounds(max_cost=math.inf)))
        assert report.violations[0].field == "bounds.max_cost"

    def test_bad_category_requirement(self, r1):
        """Test category requirements must have non-empty segments."""
        report = validate_request(replace(r1, category_requirement="demo/"))
        assert "category segments non-empty" in report.rules()


class TestTokens:
    """Test the token rule used for concepts and attribute keys."""

    @pytest.mark.parametrize("value", ["A", "c0", "travel/booking", "x-y_z"])
    def test_valid_tokens(self, value):
        """Test accepted token shapes."""
        assert is_token(value)

    @pytest.mark.parametrize("value", ["", "a b", "é", 3, None])
    def test_invalid_tokens(self, value):
        """Test rejected token shapes."""
        assert not is_token(value)

    def test_qos_vector_get_rejects_unknown(self):
        """Test QoSVector.get only knows the five attributes."""
        qos = QoSVector(1, 1, 1, 1, 1)
        with pytest.raises(KeyError):
            qos.get("latency")
