"""Validation of service descriptions and requests.

Validation produces a report rather than raising, so callers decide whether a
violation is fatal (registration, parsing) or merely reported (CLI checks).
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Any

from .errors import ValidationFailedError
from .model import (
    QOS_ATTRIBUTES,
    Constraint,
    ConstraintOp,
    FunctionalitySpec,
    QoSVector,
    Request,
    ServiceDescription,
    category_segments,
)

logger = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r"^[A-Za-z0-9_\-/]+$")
URI_PATTERN = re.compile(r"^\S+$")


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str


@dataclass
class ValidationReport:
    """Outcome of a validation pass: ``ok`` or a list of named violations."""

    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, field_path: str, rule: str) -> None:
        self.violations.append(Violation(field_path, rule))

    def rules(self) -> list[str]:
        return [v.rule for v in self.violations]

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ValidationFailedError((v.field, v.rule) for v in self.violations)


def is_token(value: Any) -> bool:
    return isinstance(value, str) and bool(TOKEN_PATTERN.match(value))


def _is_real(value: Any) -> bool:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        return False
    try:
        return math.isfinite(value)
    except OverflowError:
        return False


def _check_concepts(report: ValidationReport, field_path: str, concepts: Any) -> None:
    for concept in concepts:
        if not is_token(concept):
            report.add(field_path, f"concept {concept!r} is not a token")


def _check_qos(report: ValidationReport, qos: QoSVector) -> None:
    values = {name: getattr(qos, name) for name in QOS_ATTRIBUTES}
    for name, value in values.items():
        if not _is_real(value):
            report.add(f"qos.{name}", f"{name} must be a finite real")
    if _is_real(values["response_time_ms"]) and values["response_time_ms"] < 0:
        report.add("qos.response_time_ms", "response_time_ms ≥ 0")
    if _is_real(values["cost"]) and values["cost"] < 0:
        report.add("qos.cost", "cost ≥ 0")
    for name in ("availability", "reliability"):
        value = values[name]
        if _is_real(value) and not 0 < value <= 1:
            report.add(f"qos.{name}", f"{name} ∉ (0,1]")
    if _is_real(values["throughput_rps"]) and values["throughput_rps"] <= 0:
        report.add("qos.throughput_rps", "throughput_rps > 0")


def _check_functionality(report: ValidationReport, spec: FunctionalitySpec) -> None:
    if not isinstance(spec.category, str) or not spec.category:
        report.add("functionality.category", "category non-empty")
    elif any(not segment for segment in category_segments(spec.category)):
        report.add("functionality.category", "category segments non-empty")
    keys = [key for key, _ in spec.attributes]
    if len(keys) != len(set(keys)):
        report.add("functionality.attributes", "attribute keys unique")
    for key, value in spec.attributes:
        if not is_token(key):
            report.add(
                "functionality.attributes", f"attribute key {key!r} is not a token"
            )
        elif not (_is_real(value) or is_token(value)):
            report.add(
                f"functionality.attributes.{key}", "value must be a real or a token"
            )


def validate_service(desc: ServiceDescription) -> ValidationReport:
    """Check every ServiceDescription invariant.

    Args:
        desc: Description to check

    Returns:
        Report naming each violated field and rule; ``report.ok`` when clean
    """
    report = ValidationReport()
    if not isinstance(desc.id, str) or not desc.id or not URI_PATTERN.match(desc.id):
        report.add("id", "id non-empty, no whitespace")
    if not isinstance(desc.name, str):
        report.add("name", "name must be a string")
    _check_concepts(report, "inputs", desc.inputs)
    _check_concepts(report, "outputs", desc.outputs)
    if not desc.outputs:
        report.add("outputs", "outputs non-empty")
    _check_functionality(report, desc.functionality)
    _check_qos(report, desc.qos)
    endpoint = desc.endpoint
    if not isinstance(endpoint, str) or not endpoint or not URI_PATTERN.match(endpoint):
        report.add("endpoint", "endpoint non-empty, no whitespace")
    version = desc.version
    if isinstance(version, bool) or not isinstance(version, int) or version < 0:
        report.add("version", "version is a non-negative integer")
    if report.violations:
        logger.debug(f"Service {desc.id!r} failed validation: {report.rules()}")
    return report


def validate_constraint(
    report: ValidationReport, index: int, constraint: Constraint
) -> None:
    path = f"constraints[{index}]"
    if not is_token(constraint.attribute):
        report.add(f"{path}.attribute", "attribute must be a token")
    if not isinstance(constraint.op, ConstraintOp):
        report.add(f"{path}.op", "op must be one of <=, >=, =, !=")
        return
    literal = constraint.literal
    if constraint.op.numeric_only and not _is_real(literal):
        report.add(
            f"{path}.literal", f"{constraint.op.value} requires a numeric literal"
        )
    elif not (_is_real(literal) or is_token(literal)):
        report.add(f"{path}.literal", "literal must be a real or a token")


def validate_request(request: Request) -> ValidationReport:
    """Check the Request invariants (non-empty goal, usable weights and bounds)."""
    report = ValidationReport()
    _check_concepts(report, "provided", request.provided)
    _check_concepts(report, "desired", request.desired)
    if not request.desired:
        report.add("desired", "desired non-empty")
    if request.category_requirement is not None:
        segments = category_segments(request.category_requirement)
        if not request.category_requirement or any(not s for s in segments):
            report.add("category", "category segments non-empty")
    for index, constraint in enumerate(request.constraints):
        validate_constraint(report, index, constraint)
    for name, weight in request.weights.items():
        if name not in QOS_ATTRIBUTES:
            report.add(f"weights.{name}", "unknown QoS attribute")
        elif not _is_real(weight) or weight < 0:
            report.add(f"weights.{name}", "weight must be a non-negative real")
    if report.ok and math.fsum(request.weights.values()) <= 0:
        report.add("weights", "weights sum > 0")
    for name, value in request.bounds.as_dict().items():
        if not _is_real(value):
            report.add(f"bounds.{name}", "bound must be a finite real")
    return report
