"""Cluster fan-out: contiguous shard ranges per worker, fail-stop aggregation.

Workers compress their shards with global offsets (shard index mod width),
so partials of one output group occupy disjoint slots and aggregation is a
plain ciphertext sum.

# this_file: src/hematch/cluster.py
"""

from __future__ import annotations

import asyncio
import logging
import time
import uuid
from collections.abc import Collection, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .constants import DEFAULT_DEADLINE_S
from .engine import AuthEngine, CompressedResult
from .exceptions import (
    AlignmentError,
    BoundsError,
    ConfigError,
    HematchError,
    IncompleteAggregationError,
    WorkerFaultError,
)
from .he.backend import Ciphertext, HeBackend
from .layout import SlotLayout
from .registry import ShardStore
from .types import BoolMask

logger = logging.getLogger(__name__)


def describe_range(shards: range) -> str:
    if not shards:
        return "no shards"
    return f"shards {shards.start}..{shards.stop - 1}"


@dataclass(frozen=True)
class ClusterPlan:
    """Contiguous shard ranges partitioning [0, shard_count), one per worker."""

    shard_count: int
    ranges: tuple[range, ...]

    @property
    def worker_count(self) -> int:
        return len(self.ranges)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.ranges)

    def owner(self, shard_index: int) -> int:
        """Worker position owning a shard; shards past the plan go to the last worker."""
        if shard_index < 0:
            raise BoundsError(f"shard index {shard_index} is negative")
        for position, shards in enumerate(self.ranges):
            if shard_index in shards:
                return position
        return self.worker_count - 1


def plan(shard_count: int, worker_count: int) -> ClusterPlan:
    """Split shards into contiguous ranges whose sizes differ by at most one.

    The remainder goes to the last workers: 10 shards over 3 workers gives
    sizes (3, 3, 4).

    Raises:
        ConfigError: If worker_count < 1 or shard_count < 0
    """
    if worker_count < 1:
        raise ConfigError("a cluster needs at least one worker")
    if shard_count < 0:
        raise ConfigError(f"shard_count must be >= 0, got {shard_count}")
    base, remainder = divmod(shard_count, worker_count)
    sizes = [base + (1 if k >= worker_count - remainder else 0) for k in range(worker_count)]
    starts = np.concatenate([[0], np.cumsum(sizes)]).tolist()
    ranges = tuple(range(starts[k], starts[k + 1]) for k in range(worker_count))
    return ClusterPlan(shard_count, ranges)


@dataclass(frozen=True)
class PartialResult:
    worker: str
    results: tuple[CompressedResult, ...]


@dataclass(frozen=True)
class PendingRegistration:
    """A registration whose outcome on its worker is unknown."""

    ciphertext: Ciphertext
    shard_index: int
    local_index: int
    attempt: str


class WorkerClient(Protocol):
    """Anything the orchestrator can fan out to."""

    name: str

    async def score(self, c_u: Ciphertext) -> list[CompressedResult]: ...

    async def register(
        self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str | None = None
    ) -> None: ...

    async def revoke(self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str) -> bool: ...

    async def health(self) -> dict[str, str]: ...


class LocalWorker:
    """In-process worker; ciphertext work runs in a thread."""

    def __init__(
        self, name: str, store: ShardStore, engine: AuthEngine, registry_path: Path | None = None
    ):
        self.name = name
        self.store = store
        self.engine = engine
        self.registry_path = registry_path

    async def score(self, c_u: Ciphertext) -> list[CompressedResult]:
        return await asyncio.to_thread(self.engine.full_auth, c_u, self.store.snapshot())

    async def register(
        self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str | None = None
    ) -> None:
        await asyncio.to_thread(self.store.register, c_u, shard_index, local_index, attempt)
        await self._persist(shard_index)

    async def revoke(self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str) -> bool:
        cleared = await asyncio.to_thread(self.store.revoke, c_u, shard_index, local_index, attempt)
        if cleared:
            await self._persist(shard_index)
        return cleared

    async def _persist(self, shard_index: int) -> None:
        if self.registry_path is not None:
            await asyncio.to_thread(self.store.persist_shard, self.registry_path, shard_index)

    async def health(self) -> dict[str, str]:
        return {"role": "worker", "shards": str(len(self.store))}


async def _call_worker(
    worker: WorkerClient, shards: range, c_u: Ciphertext, deadline: float
) -> PartialResult:
    started = time.perf_counter()
    try:
        results = await asyncio.wait_for(worker.score(c_u), deadline)
    except (TimeoutError, asyncio.TimeoutError) as e:
        raise WorkerFaultError(
            f"worker {worker.name} ({describe_range(shards)}) timed out after {deadline:g}s",
            worker.name,
            shards,
        ) from e
    except (OSError, HematchError) as e:
        raise WorkerFaultError(
            f"worker {worker.name} ({describe_range(shards)}) failed: {e}", worker.name, shards
        ) from e
    logger.debug(f"Worker {worker.name} answered in {time.perf_counter() - started:.3f}s")
    return PartialResult(worker.name, tuple(results))


async def fan_out(
    c_u: Ciphertext,
    cluster: ClusterPlan,
    workers: Sequence[WorkerClient],
    deadline: float = DEFAULT_DEADLINE_S,
) -> list[PartialResult]:
    """Send the query to every worker concurrently.

    Raises:
        WorkerFaultError: For the first failing worker in plan order; no
            partial answer is returned
    """
    if len(workers) != cluster.worker_count:
        raise ConfigError(f"plan has {cluster.worker_count} workers, {len(workers)} given")
    outcomes = await asyncio.gather(
        *(_call_worker(w, r, c_u, deadline) for w, r in zip(workers, cluster.ranges, strict=True)),
        return_exceptions=True,
    )
    partials = []
    for outcome in outcomes:
        if isinstance(outcome, BaseException):
            raise outcome
        partials.append(outcome)
    return partials


def expected_partials(
    cluster: ClusterPlan, layout: SlotLayout, n_registered: int, names: Sequence[str]
) -> dict[int, set[str]]:
    """Workers that must contribute to each output group for n_registered users."""
    expected: dict[int, set[str]] = {}
    for shard_index in range(layout.shard_count(n_registered)):
        group, _ = layout.group_of(shard_index)
        expected.setdefault(group, set()).add(names[cluster.owner(shard_index)])
    return expected


def aggregate(
    partials: Sequence[PartialResult],
    backend: HeBackend,
    expected: Mapping[int, Collection[str]] | None = None,
) -> list[CompressedResult]:
    """Add partial results slotwise per output group.

    Raises:
        IncompleteAggregationError: If an expected worker has no partial for a group
        AlignmentError: If two partials claim the same slot
    """
    by_group: dict[int, list[tuple[str, CompressedResult]]] = {}
    for partial in partials:
        for result in partial.results:
            by_group.setdefault(result.group_index, []).append((partial.worker, result))
    for group, names in (expected or {}).items():
        present = {name for name, _ in by_group.get(group, [])}
        missing = set(names) - present
        if missing:
            raise IncompleteAggregationError(
                f"output group {group} lacks partials from {sorted(missing)}"
            )
    out = []
    for group in sorted(by_group):
        (_, first), *rest = by_group[group]
        ct, valid = first.ciphertext, first.valid_slots.copy()
        for _, result in rest:
            if np.any(valid & result.valid_slots):
                raise AlignmentError(f"partials of output group {group} overlap")
            ct = backend.add(ct, result.ciphertext)
            valid |= result.valid_slots
        out.append(CompressedResult(group, ct, valid))
    return out


class ClusterOrchestrator:
    """Routes enrollments to shard owners and fans authentication out.

    A registration whose outcome is unknown (timeout or dropped connection)
    is revoked on the owning worker before the fault is reported, so the
    block is free for a retry. If the worker cannot be reached for the
    revocation either, the block stays pending: its slots are masked out of
    authentication results and further enrollments are refused until a
    later revocation succeeds.
    """

    def __init__(
        self,
        backend: HeBackend,
        layout: SlotLayout,
        cluster: ClusterPlan,
        workers: Sequence[WorkerClient],
        deadline: float = DEFAULT_DEADLINE_S,
    ):
        if len(workers) != cluster.worker_count:
            raise ConfigError(f"plan has {cluster.worker_count} workers, {len(workers)} given")
        self.backend = backend
        self.layout = layout
        self.plan = cluster
        self.workers = list(workers)
        self.deadline = deadline
        self.pending: dict[tuple[int, int], PendingRegistration] = {}

    @property
    def names(self) -> list[str]:
        return [w.name for w in self.workers]

    def _owner(self, shard_index: int) -> tuple[WorkerClient, range]:
        position = self.plan.owner(shard_index)
        return self.workers[position], self.plan.ranges[position]

    async def register(self, c_u: Ciphertext, shard_index: int, local_index: int) -> None:
        """Place a registration on the shard owner.

        Raises:
            WorkerFaultError: If the owner timed out or is unreachable, or an
                earlier registration is still pending
        """
        await self.resolve_pending()
        worker, shards = self._owner(shard_index)
        attempt = uuid.uuid4().hex
        try:
            await asyncio.wait_for(
                worker.register(c_u, shard_index, local_index, attempt), self.deadline
            )
        except (TimeoutError, asyncio.TimeoutError) as e:
            await self._revoke_or_hold(PendingRegistration(c_u, shard_index, local_index, attempt))
            raise WorkerFaultError(
                f"worker {worker.name} ({describe_range(shards)}) timed out registering",
                worker.name,
                shards,
            ) from e
        except OSError as e:
            await self._revoke_or_hold(PendingRegistration(c_u, shard_index, local_index, attempt))
            raise WorkerFaultError(
                f"worker {worker.name} ({describe_range(shards)}) unreachable: {e}", worker.name, shards
            ) from e

    async def _revoke_or_hold(self, pending: PendingRegistration) -> None:
        worker, _ = self._owner(pending.shard_index)
        try:
            await asyncio.wait_for(
                worker.revoke(pending.ciphertext, pending.shard_index, pending.local_index, pending.attempt),
                self.deadline,
            )
        except (TimeoutError, asyncio.TimeoutError, OSError, HematchError) as e:
            logger.warning(
                f"Block {pending.local_index} of shard {pending.shard_index} left pending: {e}"
            )
            self.pending[(pending.shard_index, pending.local_index)] = pending
        else:
            self.pending.pop((pending.shard_index, pending.local_index), None)

    async def resolve_pending(self) -> None:
        """Retry revocation of every pending registration.

        Raises:
            WorkerFaultError: If any registration is still pending afterwards
        """
        for pending in list(self.pending.values()):
            await self._revoke_or_hold(pending)
        if self.pending:
            shard_index, local_index = min(self.pending)
            worker, shards = self._owner(shard_index)
            raise WorkerFaultError(
                f"registration at block {local_index} of shard {shard_index} is still pending on "
                f"worker {worker.name}",
                worker.name,
                shards,
            )

    def mask_pending(self, results: Sequence[CompressedResult]) -> list[CompressedResult]:
        """Clear the valid bits of blocks whose registration is pending."""
        if not self.pending:
            return list(results)
        masked: dict[int, BoolMask] = {}
        for shard_index, local_index in self.pending:
            group, offset = self.layout.group_of(shard_index)
            slot = self.layout.slot_of(self.layout.capacity * offset + local_index)
            masked.setdefault(group, np.zeros(self.layout.slot_count, dtype=bool))[slot] = True
        out = []
        for result in results:
            hidden = masked.get(result.group_index)
            valid = result.valid_slots if hidden is None else result.valid_slots & ~hidden
            out.append(CompressedResult(result.group_index, result.ciphertext, valid))
        return out

    async def authenticate(self, c_u: Ciphertext, n_registered: int) -> list[CompressedResult]:
        started = time.perf_counter()
        partials = await fan_out(c_u, self.plan, self.workers, self.deadline)
        expected = expected_partials(self.plan, self.layout, n_registered, self.names)
        results = self.mask_pending(aggregate(partials, self.backend, expected))
        logger.debug(
            f"Authenticated over {len(self.workers)} workers in {time.perf_counter() - started:.3f}s"
        )
        return results
