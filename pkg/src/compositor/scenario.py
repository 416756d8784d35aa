"""Scripted scenarios over a composition system.

A scenario is a JSON or YAML array of steps, or an object with ``steps`` plus
optional setup (``catalog``, ``registries``, ``warm``). Each step has a
``type``: advance, fault, heal, register, deregister, request, sync or expect.
``expect`` checks the most recent step that produced a result.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from .catalog import BUILTIN_REQUESTS, load_catalog, load_request_text
from .config import CompositorConfig
from .errors import CompositorError, ParseError, ScenarioError
from .execution import DataflowMode
from .gateway import CompositionSystem, handle_document
from .registry import Registry
from .serialization import (
    load_json_document,
    pydantic_parse_error,
    service_from_document,
)

logger = logging.getLogger(__name__)


class _Step(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AdvanceStep(_Step):
    type: Literal["advance"]
    seconds: int = Field(ge=0)


class FaultStep(_Step):
    type: Literal["fault", "heal"]
    target: str = Field(description="service:<id>, replica:<n> or registry:<id>")


class RegisterStep(_Step):
    type: Literal["register"]
    service: Dict[str, Any]
    registry: Optional[str] = None


class DeregisterStep(_Step):
    type: Literal["deregister"]
    id: str
    registry: Optional[str] = None


class RequestStep(_Step):
    type: Literal["request"]
    request: Union[Dict[str, Any], str] = Field(
        description="Request document or fixture name (R1, R2)"
    )
    execute: bool = True
    mode: DataflowMode = DataflowMode.DECENTRALIZED


class SyncStep(_Step):
    type: Literal["sync"]
    what: Literal["registries", "replicas", "both"] = "both"


class ExpectStep(_Step):
    type: Literal["expect"]
    trace: Optional[List[str]] = None
    wsdb_hits: Optional[int] = None
    registry_fetches: Optional[int] = None
    error: Optional[str] = None
    nodes: Optional[List[str]] = None
    latency_ms: Optional[float] = None
    catalog: Optional[Dict[str, List[str]]] = Field(
        default=None,
        description="Registry id to the exact sorted list of service ids it must hold",
    )


Step = Annotated[
    Union[
        AdvanceStep,
        FaultStep,
        RegisterStep,
        DeregisterStep,
        RequestStep,
        SyncStep,
        ExpectStep,
    ],
    Field(discriminator="type"),
]


class ScenarioDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    catalog: Optional[str] = Field(
        default=None, description="Builtin catalog name or path"
    )
    registries: List[str] = Field(default_factory=lambda: ["R1"], min_length=1)
    warm: bool = False
    steps: List[Step]


_STEPS = TypeAdapter(List[Step])


@dataclass
class StepOutcome:
    step: int
    type: str
    result: Dict[str, Any] = field(default_factory=dict)
    trace: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {"step": self.step, "type": self.type, "result": self.result}


def parse_scenario(data: bytes | str) -> ScenarioDoc:
    """Parse a scenario file (JSON or YAML).

    Raises:
        ParseError: On malformed text or an invalid step, naming the step index
    """
    try:
        document = yaml.safe_load(data)
    except yaml.YAMLError as e:
        raise ParseError(f"scenario is not valid YAML/JSON: {e}") from e
    try:
        if isinstance(document, list):
            return ScenarioDoc(steps=_STEPS.validate_python(document))
        return ScenarioDoc.model_validate(document)
    except ValidationError as e:
        raise pydantic_parse_error(e) from e


def load_scenario(path: Path) -> ScenarioDoc:
    return parse_scenario(path.read_bytes())


def build_system(
    scenario: ScenarioDoc, config: CompositorConfig, catalog: Optional[str] = None
) -> CompositionSystem:
    """A fresh system for a scenario; ``catalog`` overrides the scenario's own."""
    source = catalog or scenario.catalog or "CAT-1"
    services = load_catalog(source)
    return CompositionSystem.from_catalog(
        services, config, scenario.registries, warm=scenario.warm
    )


def _request_document(request: Union[Dict[str, Any], str]) -> Any:
    if isinstance(request, str):
        if request not in BUILTIN_REQUESTS and not Path(request).exists():
            raise ParseError(f"unknown request fixture {request}", field="request")
        return load_json_document(load_request_text(request))
    return request


class ScenarioRunner:
    """Runs the steps of one scenario against a system, in order."""

    def __init__(self, system: CompositionSystem) -> None:
        self.system = system
        self.outcomes: List[StepOutcome] = []
        self.last: Optional[StepOutcome] = None

    def run(self, steps: List[Any]) -> List[StepOutcome]:
        """Run every step.

        Raises:
            ScenarioError: If a step is invalid or an expectation fails
        """
        for index, step in enumerate(steps):
            try:
                outcome = self.run_step(index, step)
            except ScenarioError:
                raise
            except CompositorError as e:
                raise ScenarioError(index, e.message) from e
            self.outcomes.append(outcome)
            if outcome.type in ("register", "deregister", "request"):
                self.last = outcome
        return self.outcomes

    def _local(self, registry_id: Optional[str], index: int) -> Registry:
        registries = self.system.local_registries
        if not registries:
            raise ScenarioError(index, "no local registry")
        if registry_id is None:
            return registries[0]
        try:
            return self.system.registry(registry_id)
        except KeyError:
            raise ScenarioError(index, f"unknown registry {registry_id}") from None

    def run_step(self, index: int, step: Any) -> StepOutcome:
        system = self.system
        if isinstance(step, AdvanceStep):
            now = system.advance(step.seconds)
            return StepOutcome(index, step.type, {"now": now})
        if isinstance(step, FaultStep):
            system.set_fault(step.target, step.type == "fault")
            return StepOutcome(index, step.type, {"target": step.target})
        if isinstance(step, RegisterStep):
            registry = self._local(step.registry, index)
            try:
                desc = service_from_document(step.service, "service")
                stored = registry.register(desc)
            except CompositorError as e:
                return StepOutcome(index, step.type, e.to_dict())
            detail = {"id": stored.id, "version": stored.version}
            return StepOutcome(index, step.type, detail)
        if isinstance(step, DeregisterStep):
            registry = self._local(step.registry, index)
            try:
                registry.deregister(step.id)
            except CompositorError as e:
                return StepOutcome(index, step.type, e.to_dict())
            return StepOutcome(index, step.type, {"id": step.id})
        if isinstance(step, RequestStep):
            document = _request_document(step.request)
            response, metrics = handle_document(
                document, system, step.execute, step.mode
            )
            return StepOutcome(index, step.type, response, metrics.trace_names())
        if isinstance(step, SyncStep):
            result: Dict[str, Any] = {}
            if step.what in ("registries", "both"):
                result["merges"] = system.sync_registries()
            if step.what in ("replicas", "both"):
                result["copied"] = system.replica_set.sync_replicas()
            return StepOutcome(index, step.type, result)
        if isinstance(step, ExpectStep):
            self.check(index, step)
            return StepOutcome(index, step.type, {"ok": True})
        raise ScenarioError(index, f"unsupported step {step!r}")

    def check(self, index: int, expect: ExpectStep) -> None:
        if expect.catalog is not None:
            for registry_id, ids in expect.catalog.items():
                held = sorted(self._local(registry_id, index).state.catalog)
                if held != sorted(ids):
                    raise ScenarioError(
                        index,
                        f"registry {registry_id} holds {held}, expected {sorted(ids)}",
                    )
        wants_result = any(
            value is not None
            for value in (expect.trace, expect.wsdb_hits, expect.registry_fetches,
                          expect.error, expect.nodes, expect.latency_ms)
        )
        if not wants_result:
            return
        if self.last is None:
            raise ScenarioError(index, "expect before any result-producing step")
        result = self.last.result
        failures = []
        if expect.error is not None and result.get("error") != expect.error:
            failures.append(f"error {result.get('error')!r} != {expect.error!r}")
        if expect.trace is not None and self.last.trace != expect.trace:
            failures.append(f"trace {self.last.trace} != {expect.trace}")
        metrics = result.get("metrics", {})
        for name in ("wsdb_hits", "registry_fetches"):
            wanted = getattr(expect, name)
            if wanted is not None and metrics.get(name) != wanted:
                failures.append(f"{name} {metrics.get(name)} != {wanted}")
        if expect.nodes is not None:
            nodes = [node["id"] for node in result.get("plan", {}).get("nodes", [])]
            if nodes != expect.nodes:
                failures.append(f"nodes {nodes} != {expect.nodes}")
        latency = result.get("latency_ms")
        if expect.latency_ms is not None and latency != expect.latency_ms:
            failures.append(f"latency_ms {latency} != {expect.latency_ms}")
        if failures:
            raise ScenarioError(index, "; ".join(failures))


def run_scenario(
    scenario: ScenarioDoc,
    config: Optional[CompositorConfig] = None,
    catalog: Optional[str] = None,
) -> List[StepOutcome]:
    """Build a fresh system for ``scenario`` and run all of its steps."""
    system = build_system(scenario, config or CompositorConfig(), catalog)
    logger.info(f"Running scenario with {len(scenario.steps)} steps")
    return ScenarioRunner(system).run(scenario.steps)
