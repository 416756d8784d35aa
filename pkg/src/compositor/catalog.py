"""Catalog loading and synthetic catalog generation."""

from __future__ import annotations

import logging
import random
from importlib import resources
from pathlib import Path
from typing import Any

from .errors import ParseError
from .matchmaker import forward_closure
from .model import FunctionalitySpec, QoSVector, Request, ServiceDescription
from .serialization import load_json_document, service_from_document

logger = logging.getLogger(__name__)

BUILTIN_CATALOGS = {"CAT-1": "cat-1.json"}
BUILTIN_REQUESTS = {"R1": "r1.json", "R2": "r2.json"}


def package_data(name: str) -> bytes:
    return resources.files("compositor").joinpath("data", name).read_bytes()


def parse_catalog(data: bytes | str) -> list[ServiceDescription]:
    """Parse a catalog document: a JSON array of service descriptions.

    An object with a ``services`` array is accepted as well.

    Raises:
        ParseError: Naming the offending entry, e.g. ``[2].qos.cost``
    """
    document: Any = load_json_document(data)
    prefix = ""
    if isinstance(document, dict) and "services" in document:
        document = document["services"]
        prefix = "services"
    if not isinstance(document, list):
        raise ParseError(
            "catalog must be an array of service descriptions", field=prefix or None
        )
    services = [
        service_from_document(doc, f"{prefix}[{i}]") for i, doc in enumerate(document)
    ]
    ids = [s.id for s in services]
    duplicates = sorted({sid for sid in ids if ids.count(sid) > 1})
    if duplicates:
        raise ParseError(f"duplicate service ids {duplicates}", field="id")
    return services


def load_catalog(source: str | Path) -> list[ServiceDescription]:
    """Load a builtin catalog by name (``CAT-1``) or a catalog file."""
    if isinstance(source, str) and source in BUILTIN_CATALOGS:
        return parse_catalog(package_data(BUILTIN_CATALOGS[source]))
    path = Path(source)
    logger.debug(f"Loading catalog from {path}")
    return parse_catalog(path.read_bytes())


def load_request_text(source: str | Path) -> bytes:
    """Raw bytes of a builtin request fixture (``R1``, ``R2``) or a request file."""
    if isinstance(source, str) and source in BUILTIN_REQUESTS:
        return package_data(BUILTIN_REQUESTS[source])
    return Path(source).read_bytes()


def concept_names(count: int) -> list[str]:
    return [f"c{i}" for i in range(count)]


def random_service(
    rng: random.Random, index: int, concepts: list[str], max_io: int
) -> ServiceDescription:
    n_inputs = rng.randint(0, min(max_io, len(concepts)))
    n_outputs = rng.randint(1, min(max_io, len(concepts)))
    return ServiceDescription(
        id=f"svc-{index:04d}",
        name=f"synthetic {index}",
        inputs=tuple(rng.sample(concepts, n_inputs)),
        outputs=tuple(rng.sample(concepts, n_outputs)),
        functionality=FunctionalitySpec(
            rng.choice(["bench/alpha", "bench/beta", "bench/alpha/fast"]),
            (
                ("price", float(rng.randint(1, 100))),
                ("tier", rng.choice(["gold", "silver"])),
            ),
        ),
        qos=QoSVector(
            response_time_ms=float(rng.randint(1, 200)),
            cost=float(rng.randint(0, 20)),
            availability=rng.randint(80, 100) / 100,
            reliability=rng.randint(80, 100) / 100,
            throughput_rps=float(rng.randint(1, 500)),
        ),
        endpoint=f"sim://svc-{index:04d}",
    )


def random_catalog(
    rng: random.Random, n_services: int, n_concepts: int, max_io: int = 3
) -> list[ServiceDescription]:
    """Random catalog over concepts ``c0..c{n-1}``; outputs are never empty."""
    concepts = concept_names(n_concepts)
    return [random_service(rng, i, concepts, max_io) for i in range(n_services)]


def solvable_catalog(
    rng: random.Random, size: int, max_retries: int = 1000
) -> tuple[list[ServiceDescription], Request]:
    """A random catalog of ``size`` services plus a request it can answer.

    The request provides ``c0`` and asks for a concept derivable from it.
    Unsolvable draws are regenerated.

    Raises:
        ValueError: If ``size`` is not positive or no solvable draw was found
    """
    if size <= 0:
        raise ValueError("catalog size must be positive")
    n_concepts = max(4, size // 2)
    for attempt in range(max_retries):
        catalog = random_catalog(rng, size, n_concepts)
        reachable = sorted(forward_closure(catalog, {"c0"}) - {"c0"})
        if reachable:
            desired = rng.choice(reachable)
            if attempt:
                logger.debug(
                    f"Solvable catalog of size {size} after {attempt + 1} draws"
                )
            request = Request(provided=frozenset({"c0"}), desired=frozenset({desired}))
            return catalog, request
    raise ValueError(f"no solvable catalog of size {size} in {max_retries} draws")
