"""Canonical JSON formats for service descriptions, cache entries and plans.

Canonical form: UTF-8, no insignificant whitespace, object keys in the
documented order, concept arrays sorted. Floats are written with ``repr``
precision so every value parses back to the identical double.
"""

from __future__ import annotations

import json
import logging
from typing import Any, Iterable, Union

from pydantic import (
    BaseModel,
    ConfigDict,
    StrictFloat,
    StrictInt,
    StrictStr,
    ValidationError,
)

from .errors import ParseError, ValidationFailedError
from .model import (
    QOS_ATTRIBUTES,
    CacheEntry,
    CompositionPlan,
    Edge,
    FunctionalitySpec,
    QoSVector,
    ServiceDescription,
)
from .validation import validate_service

logger = logging.getLogger(__name__)

Number = Union[StrictInt, StrictFloat]


class _StrictDoc(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class FunctionalityDoc(_StrictDoc):
    category: StrictStr
    attributes: dict[StrictStr, Union[Number, StrictStr]] = {}


class QoSDoc(_StrictDoc):
    response_time_ms: Number
    cost: Number
    availability: Number
    reliability: Number
    throughput_rps: Number


class ServiceDoc(_StrictDoc):
    id: StrictStr
    name: StrictStr
    inputs: list[StrictStr]
    outputs: list[StrictStr]
    functionality: FunctionalityDoc
    qos: QoSDoc
    endpoint: StrictStr
    version: StrictInt = 1


class CacheEntryDoc(_StrictDoc):
    service: dict[str, Any]
    fetched_at: StrictInt
    ttl_s: StrictInt


class PlanDoc(_StrictDoc):
    nodes: list[dict[str, Any]]
    edges: list[tuple[StrictStr, StrictStr, StrictStr]]
    layers: list[list[StrictStr]]
    aggregate: QoSDoc | None = None


def canonical_json(value: Any) -> str:
    """Compact, deterministic JSON text; NaN and infinities are refused."""
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    result: dict[str, Any] = {}
    for key, value in pairs:
        if key in result:
            raise ValueError(f"duplicate key {key!r}")
        result[key] = value
    return result


def _reject_constant(name: str) -> Any:
    raise ValueError(f"non-finite number {name}")


def load_json_document(data: bytes | str) -> Any:
    """Decode UTF-8 JSON, mapping every failure to a ParseError with a byte offset.

    Duplicate keys and non-finite numbers are rejected.

    Raises:
        ParseError: On undecodable bytes or malformed JSON
    """
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as e:
            raise ParseError(f"invalid UTF-8: {e.reason}", offset=e.start) from e
    else:
        text = data
    try:
        return json.loads(
            text,
            object_pairs_hook=_reject_duplicates,
            parse_constant=_reject_constant,
        )
    except json.JSONDecodeError as e:
        offset = len(text[: e.pos].encode("utf-8", errors="surrogatepass"))
        raise ParseError(e.msg, offset=offset) from e
    except ValueError as e:
        raise ParseError(str(e)) from e
    except RecursionError as e:
        raise ParseError("document nested too deeply") from e


def pydantic_parse_error(error: ValidationError, prefix: str = "") -> ParseError:
    """Convert the first pydantic error into a ParseError carrying its field path."""
    first = error.errors()[0]
    path = ".".join(str(part) for part in first["loc"])
    if prefix:
        path = f"{prefix}.{path}" if path else prefix
    return ParseError(first["msg"], field=path or None)


def as_float(value: Any, field: str | None = None) -> float:
    """Convert a decoded JSON number to float.

    Raises:
        ParseError: If an integer is too large for a float, naming ``field``
    """
    try:
        return float(value)
    except OverflowError as e:
        raise ParseError(f"number out of range: {e}", field=field) from e


def _join(prefix: str, field: str) -> str:
    return f"{prefix}.{field}" if prefix else field


def _qos_vector(values: Any, prefix: str = "") -> QoSVector:
    return QoSVector(**{
        name: as_float(getattr(values, name), _join(prefix, f"qos.{name}"))
        for name in QOS_ATTRIBUTES
    })


def _attribute_value(value: Any, field: str | None = None) -> float | str:
    if isinstance(value, str):
        return value
    return as_float(value, field)


def _attributes(
    items: Iterable[tuple[str, Any]], prefix: str = ""
) -> tuple[tuple[str, float | str], ...]:
    return tuple(
        (k, _attribute_value(v, _join(prefix, f"functionality.attributes.{k}")))
        for k, v in items
    )


def canonicalize(desc: ServiceDescription) -> ServiceDescription:
    """Return the canonical form of a valid description.

    Concept sets are sorted, the attribute map key-sorted and numbers coerced to
    floats. Idempotent.

    Raises:
        ValidationFailedError: If the description is invalid
    """
    report = validate_service(desc)
    if not report.ok:
        raise ValidationFailedError((v.field, v.rule) for v in report.violations)
    qos = _qos_vector(desc.qos)
    functionality = FunctionalitySpec(
        desc.functionality.category, _attributes(desc.functionality.attributes)
    )
    return ServiceDescription(
        id=desc.id,
        name=desc.name,
        inputs=desc.inputs,
        outputs=desc.outputs,
        functionality=functionality,
        qos=qos,
        endpoint=desc.endpoint,
        version=desc.version,
    )


def qos_to_document(qos: QoSVector) -> dict[str, float]:
    return {name: float(getattr(qos, name)) for name in QOS_ATTRIBUTES}


def service_to_document(desc: ServiceDescription) -> dict[str, Any]:
    """Plain-dict form of a canonical description, keys in canonical order."""
    canon = canonicalize(desc)
    return {
        "id": canon.id,
        "name": canon.name,
        "inputs": list(canon.inputs),
        "outputs": list(canon.outputs),
        "functionality": {
            "category": canon.functionality.category,
            "attributes": dict(canon.functionality.attributes),
        },
        "qos": qos_to_document(canon.qos),
        "endpoint": canon.endpoint,
        "version": canon.version,
    }


def serialize_service(desc: ServiceDescription) -> bytes:
    return canonical_json(service_to_document(desc)).encode("utf-8")


def service_from_document(document: Any, prefix: str = "") -> ServiceDescription:
    """Build a validated, canonical description from a decoded JSON value.

    Args:
        document: Decoded JSON (must be an object)
        prefix: Field-path prefix for nested documents, e.g. ``nodes[0]``

    Raises:
        ParseError: On schema or invariant violations, naming the field
    """
    try:
        doc = ServiceDoc.model_validate(document)
    except ValidationError as e:
        raise pydantic_parse_error(e, prefix) from e
    desc = ServiceDescription(
        id=doc.id,
        name=doc.name,
        inputs=tuple(doc.inputs),
        outputs=tuple(doc.outputs),
        functionality=FunctionalitySpec(
            doc.functionality.category,
            _attributes(doc.functionality.attributes.items(), prefix),
        ),
        qos=_qos_vector(doc.qos, prefix),
        endpoint=doc.endpoint,
        version=doc.version,
    )
    report = validate_service(desc)
    if not report.ok:
        violation = report.violations[0]
        field = f"{prefix}.{violation.field}" if prefix else violation.field
        raise ParseError(violation.rule, field=field)
    return desc


def parse_service(data: bytes | str) -> ServiceDescription:
    """Parse a service-description document.

    Raises:
        ParseError: With a byte offset for malformed JSON, or a field path for
            schema and bounds violations
    """
    return service_from_document(load_json_document(data))


def cache_entry_to_document(entry: CacheEntry) -> dict[str, Any]:
    return {
        "service": service_to_document(entry.service),
        "fetched_at": entry.fetched_at,
        "ttl_s": entry.ttl_s,
    }


def serialize_cache_entry(entry: CacheEntry) -> str:
    return canonical_json(cache_entry_to_document(entry))


def cache_entry_from_document(document: Any) -> CacheEntry:
    try:
        doc = CacheEntryDoc.model_validate(document)
    except ValidationError as e:
        raise pydantic_parse_error(e) from e
    if doc.fetched_at < 0:
        raise ParseError("fetched_at ≥ 0", field="fetched_at")
    if doc.ttl_s <= 0:
        raise ParseError("ttl_s > 0", field="ttl_s")
    service = service_from_document(doc.service, "service")
    return CacheEntry(service, doc.fetched_at, doc.ttl_s)


def parse_cache_entry(data: bytes | str) -> CacheEntry:
    return cache_entry_from_document(load_json_document(data))


def plan_to_document(plan: CompositionPlan) -> dict[str, Any]:
    """Canonical plan document: ``{nodes, edges, layers, aggregate}``."""
    return {
        "nodes": [service_to_document(node) for node in plan.nodes],
        "edges": [list(edge) for edge in sorted(plan.edges)],
        "layers": [list(layer) for layer in plan.layers],
        "aggregate": (
            qos_to_document(plan.aggregate) if plan.aggregate is not None else None
        ),
    }


def serialize_plan(plan: CompositionPlan) -> bytes:
    return canonical_json(plan_to_document(plan)).encode("utf-8")


def plan_from_document(document: Any) -> CompositionPlan:
    try:
        doc = PlanDoc.model_validate(document)
    except ValidationError as e:
        raise pydantic_parse_error(e) from e
    nodes = [
        service_from_document(node, f"nodes[{i}]") for i, node in enumerate(doc.nodes)
    ]
    aggregate = None
    if doc.aggregate is not None:
        aggregate = QoSVector(**{
            n: as_float(getattr(doc.aggregate, n), f"aggregate.{n}")
            for n in QOS_ATTRIBUTES
        })
    return CompositionPlan(
        nodes=tuple(nodes),
        edges=frozenset(Edge(*edge) for edge in doc.edges),
        layers=tuple(tuple(layer) for layer in doc.layers),
        aggregate=aggregate,
    )


def parse_plan(data: bytes | str) -> CompositionPlan:
    return plan_from_document(load_json_document(data))

