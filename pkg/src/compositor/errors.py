"""Error hierarchy for the compositor.

Every failure the engine can report carries a stable ``code`` string and a
JSON-safe ``detail`` mapping so outer surfaces (CLI, MCP tools, the framed
endpoint) can render it without knowing the concrete exception type.
"""

from __future__ import annotations

from typing import Any, Iterable


class CompositorError(Exception):
    """Base class for all domain errors."""

    code = "INTERNAL"

    def __init__(self, message: str, detail: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.message = message
        self.detail: dict[str, Any] = detail or {}

    def to_dict(self) -> dict[str, Any]:
        """Render as ``{"error": code, "detail": ...}``."""
        return {"error": self.code, "detail": self.detail}


class ParseError(CompositorError):
    """Malformed document or frame body."""

    code = "PARSE_ERROR"

    def __init__(
        self,
        message: str,
        offset: int | None = None,
        field: str | None = None,
    ) -> None:
        detail: dict[str, Any] = {"message": message}
        if offset is not None:
            detail["offset"] = offset
        if field is not None:
            detail["field"] = field
        super().__init__(message, detail)
        self.offset = offset
        self.field = field


class ValidationFailedError(CompositorError):
    """A value broke one or more domain invariants."""

    code = "VALIDATION"

    def __init__(self, violations: Iterable[tuple[str, str]]) -> None:
        pairs = list(violations)
        message = "; ".join(f"{field}: {rule}" for field, rule in pairs) or "invalid"
        super().__init__(
            message,
            {"violations": [{"field": field, "rule": rule} for field, rule in pairs]},
        )
        self.violations = pairs


class VersionConflictError(CompositorError):
    code = "VERSION_CONFLICT"

    def __init__(self, service_id: str, existing: int, offered: int) -> None:
        super().__init__(
            f"Service {service_id} version {offered} does not supersede {existing}",
            {
                "id": service_id,
                "existing_version": existing,
                "offered_version": offered,
            },
        )


class NotFoundError(CompositorError):
    code = "NOT_FOUND"

    def __init__(self, service_id: str) -> None:
        super().__init__(f"Service {service_id} is not registered", {"id": service_id})


class FrameError(CompositorError):
    code = "FRAME_ERROR"

    def __init__(self, reason: str, **extra: Any) -> None:
        super().__init__(f"Frame rejected: {reason}", {"reason": reason, **extra})
        self.reason = reason


class ReplicaDownError(CompositorError):
    code = "REPLICA_DOWN"

    def __init__(self, replica: str) -> None:
        super().__init__(f"Replica {replica} is down", {"replica": replica})


class AllReplicasDownError(CompositorError):
    code = "ALL_REPLICAS_DOWN"

    def __init__(self) -> None:
        super().__init__("No WSDB replica is available")


class NoCompositionError(CompositorError):
    """The desired concepts cannot be produced from what the request provides."""

    code = "NO_COMPOSITION"

    def __init__(self, unreachable: Iterable[str], reason: str | None = None) -> None:
        concepts = sorted(unreachable)
        detail: dict[str, Any] = {"unreachable": concepts}
        if reason:
            detail["reason"] = reason
        super().__init__(
            f"No composition reaches {concepts}"
            if concepts
            else f"No composition found ({reason})",
            detail,
        )
        self.unreachable = concepts


class RegistryUnreachableError(CompositorError):
    code = "REGISTRY_UNREACHABLE"

    def __init__(self, registry: str | None = None) -> None:
        detail = {"registry": registry} if registry else {}
        super().__init__(
            f"Registry {registry} is unreachable"
            if registry
            else "No registry is reachable",
            detail,
        )


class NoFeasibleError(CompositorError):
    code = "NO_FEASIBLE"

    def __init__(self, reason: str) -> None:
        super().__init__(f"No feasible plan: {reason}", {"reason": reason})


class CycleError(CompositorError):
    code = "CYCLE"

    def __init__(self, stuck: Iterable[str], missing: Iterable[str]) -> None:
        stuck_ids = sorted(stuck)
        super().__init__(
            f"Services {stuck_ids} cannot be scheduled",
            {"services": stuck_ids, "missing": sorted(missing)},
        )


class ServiceDownError(CompositorError):
    code = "SERVICE_DOWN"

    def __init__(self, service_id: str) -> None:
        super().__init__(f"Service {service_id} is down", {"id": service_id})
        self.service_id = service_id


class MissingInputError(CompositorError):
    code = "MISSING_INPUT"

    def __init__(self, concepts: Iterable[str], service_id: str | None = None) -> None:
        missing = sorted(concepts)
        detail: dict[str, Any] = {"concepts": missing}
        if service_id:
            detail["id"] = service_id
        super().__init__(f"Missing input values for {missing}", detail)


class NoHealthyPlanError(CompositorError):
    code = "NO_HEALTHY_PLAN"

    def __init__(self, down: Iterable[str]) -> None:
        super().__init__(
            "Every candidate plan uses a down service", {"down": sorted(down)}
        )


class ConfigError(CompositorError):
    code = "CONFIG_ERROR"

    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}", {"key": key, "message": message})
        self.key = key


class ScenarioError(CompositorError):
    code = "SCENARIO_FAILED"

    def __init__(self, step: int, message: str) -> None:
        super().__init__(f"step {step}: {message}", {"step": step, "message": message})


class RemoteError(CompositorError):
    """An ERROR reply from a peer, carrying the peer's code unchanged."""

    def __init__(self, code: str, detail: dict[str, Any] | None = None) -> None:
        super().__init__(f"Peer reported {code}", detail)
        self.code = code
