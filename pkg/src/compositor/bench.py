"""Benchmark harness: composition time by catalog size, exposure time by method count.

Timings use the monotonic wall clock; catalogs and services come from seeded
generators so repeated runs measure identical inputs.
"""

from __future__ import annotations

import csv
import io
import logging
import random
import time
from dataclasses import dataclass, field
from typing import Sequence, TextIO

from .catalog import concept_names, random_service, solvable_catalog
from .config import CompositorConfig
from .errors import NoCompositionError, NoFeasibleError
from .gateway import CompositionSystem, run_pipeline
from .metrics import MetricsRecorder
from .model import Metrics
from .registry import Registry

logger = logging.getLogger(__name__)


@dataclass
class BenchTable:
    header: tuple[str, str]
    rows: list[tuple[int, float]] = field(default_factory=list)

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(self.header)
        for size, elapsed_ms in self.rows:
            writer.writerow([size, f"{elapsed_ms:.6f}"])

    def to_csv(self) -> str:
        buffer = io.StringIO()
        self.write_csv(buffer)
        return buffer.getvalue()


def _check_positive(values: Sequence[int], name: str) -> None:
    if not values:
        raise ValueError(f"{name} must not be empty")
    bad = [v for v in values if v <= 0]
    if bad:
        raise ValueError(f"{name} must be positive, got {bad}")


def bench_composition(
    sizes: Sequence[int], seed: int, config: CompositorConfig | None = None
) -> BenchTable:
    """Time lookup, evaluation and composition over random solvable catalogs.

    Each size gets a fresh system whose WSDB is warmed with the catalog, so the
    measurement covers matching from cache through the composed plan.

    Raises:
        ValueError: If a size is not positive
    """
    _check_positive(sizes, "sizes")
    config = config or CompositorConfig()
    rng = random.Random(seed)
    table = BenchTable(("size", "composition_time_ms"))
    for size in sizes:
        catalog, request = solvable_catalog(rng, size)
        system = CompositionSystem.from_catalog(catalog, config, warm=True)
        started = time.perf_counter()
        try:
            run_pipeline(request, system, system.now(), Metrics(), execute=False)
        except (NoCompositionError, NoFeasibleError) as e:
            # bounded search can miss deep solutions in large catalogs
            logger.warning(f"Size {size}: no plan within search limits ({e.code})")
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        table.rows.append((size, elapsed_ms))
        logger.info(f"Composed over {size} services in {elapsed_ms:.3f} ms")
    return table


def bench_exposure(
    counts: Sequence[int], seed: int = 0, recorder: MetricsRecorder | None = None
) -> BenchTable:
    """Time registering ``count`` synthetic services into a fresh registry.

    Each measurement is also added to ``recorder``'s exposure total.

    Raises:
        ValueError: If a count is not positive
    """
    _check_positive(counts, "counts")
    rng = random.Random(seed)
    concepts = concept_names(16)
    table = BenchTable(("count", "exposure_time_ms"))
    for count in counts:
        services = [random_service(rng, i, concepts, max_io=3) for i in range(count)]
        registry = Registry(f"bench-{count}")
        started = time.perf_counter()
        for service in services:
            registry.register(service)
        elapsed_ms = (time.perf_counter() - started) * 1000.0
        table.rows.append((count, elapsed_ms))
        if recorder is not None:
            recorder.record_exposure(elapsed_ms)
        logger.info(f"Exposed {count} methods in {elapsed_ms:.3f} ms")
    return table
