"""Cluster latency and compression benchmark on a synthetic population.

Workers run as separate OS processes on loopback ports; the parent plays
client and main server. Reported per feature width:

- authentication latency for each worker count
- response size with and without compression

# this_file: src/hematch/bench.py
"""

from __future__ import annotations

import asyncio
import json
import logging
import multiprocessing as mp
import queue
import statistics
import tempfile
import time
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.table import Table

from .client import ClientPipeline, DecisionParams, FeatureVector
from .cluster import ClusterOrchestrator, plan
from .engine import AuthEngine, ServerModelParams
from .exceptions import ConfigError, WorkerFaultError
from .he.backend import create_backend
from .he.keys import KeyBundle
from .he.params import HeParams
from .he.serialize import save_galois_keys, save_public_key, save_relin_key, serialize_ciphertext
from .layout import SlotLayout
from .oracle import SyntheticFixture, SyntheticSpec, gen_synthetic
from .registry import ShardStore
from .transport.client import RemoteWorker
from .transport.config import load_config
from .transport.services import run_service

logger = logging.getLogger(__name__)

WORKER_START_TIMEOUT_S = 120.0


@dataclass
class BenchRow:
    width: int
    workers: int
    latencies_ms: list[float] = field(default_factory=list)
    correct: int = 0
    trials: int = 0

    @property
    def median_ms(self) -> float:
        return statistics.median(self.latencies_ms) if self.latencies_ms else float("nan")


@dataclass
class CompressionRow:
    width: int
    compressed_count: int
    compressed_bytes: int
    uncompressed_count: int
    uncompressed_bytes: int

    @property
    def ratio(self) -> float:
        return self.uncompressed_bytes / self.compressed_bytes if self.compressed_bytes else float("nan")


@dataclass
class BenchReport:
    population: int
    profile: str
    backend: str
    latency: list[BenchRow] = field(default_factory=list)
    compression: list[CompressionRow] = field(default_factory=list)

    def speedup(self, width: int, workers: int) -> float:
        """Median latency with one worker divided by the median with ``workers``."""
        rows = {r.workers: r for r in self.latency if r.width == width}
        if 1 not in rows or workers not in rows:
            raise KeyError(f"no latency rows for width {width} with 1 and {workers} workers")
        return rows[1].median_ms / rows[workers].median_ms


def _worker_main(config_path: str, ports: Any) -> None:
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    try:
        asyncio.run(run_service(load_config(Path(config_path)), ready=ports.put))
    except KeyboardInterrupt:  # pragma: no cover
        pass


class _Population:
    """Keys, packed shards and model for one feature width."""

    def __init__(self, params: HeParams, fixture: SyntheticFixture, keys: KeyBundle, width: int):
        self.params = params
        self.fixture = fixture
        self.keys = keys
        self.backend = create_backend(params)
        self.layout = SlotLayout(self.backend.slot_count, width)
        self.client = ClientPipeline(self.backend, keys.public_key, keys.secret_key, width)
        spec = fixture.spec
        self.decision = DecisionParams(spec.fc1_bias, spec.threshold)
        self.model = ServerModelParams(self.layout, spec.bias, spec.weights)
        vectors = [FeatureVector(v) for _, v, _ in fixture.registry]
        capacity = self.layout.capacity
        self.store = ShardStore(self.backend, keys.public_key, keys.galois_keys, self.layout)
        started = time.perf_counter()
        for shard_index in range(self.layout.shard_count(len(vectors))):
            chunk = vectors[shard_index * capacity : (shard_index + 1) * capacity]
            occupancy = [True] * len(chunk) + [False] * (capacity - len(chunk))
            self.store.load_packed_shard(
                shard_index, self.client.pack_shard(chunk), self.layout.check_occupancy(occupancy)
            )
        logger.info(
            f"Packed {len(vectors)} width-{width} vectors into {len(self.store)} shards "
            f"in {time.perf_counter() - started:.2f}s"
        )

    def write_worker_dirs(self, root: Path, worker_count: int) -> list[Path]:
        """Key files, model and a registry slice per worker; returns config paths."""
        keys = root / "keys"
        keys.mkdir(parents=True, exist_ok=True)
        save_public_key(self.keys.public_key, keys / "public.key")
        save_relin_key(self.keys.relin_key, keys / "relin.key")
        save_galois_keys(self.keys.galois_keys, keys / "galois.key")
        spec = self.fixture.spec
        (root / "model.json").write_text(
            json.dumps(
                {
                    "fc16_bias": spec.bias.tolist(),
                    "fc1_weights": spec.weights.tolist(),
                    "fc1_bias": spec.fc1_bias,
                    "threshold": spec.threshold,
                }
            ),
            encoding="utf-8",
        )
        cluster = plan(len(self.store), worker_count)
        configs = []
        for position, shards in enumerate(cluster.ranges):
            registry = root / f"worker-{position}"
            part = ShardStore(self.backend, self.keys.public_key, self.keys.galois_keys, self.layout)
            for shard_index in shards:
                shard = self.store.get(shard_index)
                part.load_packed_shard(shard_index, shard.ciphertext, shard.occupancy)
            part.persist(registry)
            config = {
                "role": "worker",
                "listen": "127.0.0.1:0",
                "registry_path": str(registry),
                "public_key": str(keys / "public.key"),
                "relin_key": str(keys / "relin.key"),
                "galois_key": str(keys / "galois.key"),
                "model_path": str(root / "model.json"),
                "profile": self.params.profile,
                "backend": self.params.backend,
                "width": self.layout.width,
            }
            path = root / f"worker-{position}.json"
            path.write_text(json.dumps(config), encoding="utf-8")
            configs.append(path)
        return configs


def _start_workers(configs: Sequence[Path]) -> tuple[list[mp.process.BaseProcess], list[int]]:
    ctx = mp.get_context("spawn")
    processes, ports = [], []
    for config in configs:
        port_queue = ctx.Queue()
        process = ctx.Process(target=_worker_main, args=(str(config), port_queue), daemon=True)
        process.start()
        processes.append(process)
        try:
            ports.append(int(port_queue.get(timeout=WORKER_START_TIMEOUT_S)))
        except queue.Empty as e:
            _stop_workers(processes)
            raise WorkerFaultError(f"worker for {config.name} did not report a port") from e
    return processes, ports


def _stop_workers(processes: Sequence[mp.process.BaseProcess]) -> None:
    for process in processes:
        process.terminate()
    for process in processes:
        process.join(timeout=10)


def _measure_cluster(pop: _Population, worker_count: int, trials: int, deadline: float) -> BenchRow:
    row = BenchRow(pop.layout.width, worker_count)
    genuine = pop.fixture.genuine[:trials]
    with tempfile.TemporaryDirectory(prefix="hematch-bench-") as tmp:
        configs = pop.write_worker_dirs(Path(tmp), worker_count)
        processes, ports = _start_workers(configs)
        try:
            workers = [RemoteWorker(("127.0.0.1", port), pop.params, timeout=deadline) for port in ports]
            orchestrator = ClusterOrchestrator(
                pop.backend, pop.layout, plan(len(pop.store), worker_count), workers, deadline
            )
            for target, vector in genuine:
                c_u = pop.client.pack_query(FeatureVector(vector))
                started = time.perf_counter()
                results = asyncio.run(orchestrator.authenticate(c_u, len(pop.fixture.registry)))
                row.latencies_ms.append((time.perf_counter() - started) * 1000.0)
                decision = pop.client.decide_many(
                    [(r.group_index, r.ciphertext, r.valid_slots) for r in results], pop.decision
                )
                row.trials += 1
                row.correct += int(decision.global_index == target)
        finally:
            _stop_workers(processes)
    logger.info(f"{worker_count} worker(s), width {row.width}: median {row.median_ms:.1f} ms")
    return row


def _measure_compression(pop: _Population) -> CompressionRow:
    engine = AuthEngine(pop.backend, pop.keys.evaluation_keys(), pop.model, pop.layout.width)
    _, vector = pop.fixture.genuine[0]
    c_u = pop.client.pack_query(FeatureVector(vector))
    shards = pop.store.snapshot()
    compressed = engine.full_auth(c_u, shards)
    uncompressed = engine.full_auth_uncompressed(c_u, shards)
    return CompressionRow(
        pop.layout.width,
        len(compressed),
        sum(len(serialize_ciphertext(r.ciphertext, pop.params)) for r in compressed),
        len(uncompressed),
        sum(len(serialize_ciphertext(r.ciphertext, pop.params)) for r in uncompressed),
    )


def run_bench(
    worker_counts: Sequence[int] = (1, 2, 3),
    population: int = 5_000,
    widths: Sequence[int] = (16,),
    trials: int = 5,
    profile: str = "production",
    backend: str = "lattice",
    seed: int = 0,
    deadline: float = 600.0,
) -> BenchReport:
    """Measure every (width, worker count) pair.

    Raises:
        ConfigError: If a worker count or the population is not positive
    """
    if population < 1 or trials < 1 or not worker_counts or min(worker_counts) < 1:
        raise ConfigError("bench needs a positive population, trial count and worker counts")
    params = HeParams.for_profile(profile, backend)
    report = BenchReport(population, profile, backend)
    for width in widths:
        fixture = gen_synthetic(
            SyntheticSpec(population, seed=seed, queries=trials, width=width)
        )
        keygen_seed = seed if profile == "test" else None
        keys = create_backend(params).keygen(keygen_seed, signed_rotations=True)
        pop = _Population(params, fixture, keys, width)
        report.compression.append(_measure_compression(pop))
        for count in worker_counts:
            report.latency.append(_measure_cluster(pop, count, trials, deadline))
    return report


def render_report(report: BenchReport, console: Console | None = None) -> None:
    console = console or Console()
    latency = Table(
        title=f"Authentication latency, N={report.population} ({report.profile}, {report.backend})"
    )
    for column in ("width", "workers", "median ms", "min ms", "max ms", "correct"):
        latency.add_column(column, justify="right")
    for row in report.latency:
        latency.add_row(
            str(row.width),
            str(row.workers),
            f"{row.median_ms:.1f}",
            f"{min(row.latencies_ms):.1f}",
            f"{max(row.latencies_ms):.1f}",
            f"{row.correct}/{row.trials}",
        )
    console.print(latency)
    sizes = Table(title="Response size with and without compression")
    for column in ("width", "compressed", "bytes", "uncompressed", "bytes", "ratio"):
        sizes.add_column(column, justify="right")
    for c in report.compression:
        sizes.add_row(
            str(c.width),
            str(c.compressed_count),
            f"{c.compressed_bytes:,}",
            str(c.uncompressed_count),
            f"{c.uncompressed_bytes:,}",
            f"{c.ratio:.1f}x",
        )
    console.print(sizes)
