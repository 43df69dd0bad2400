"""Unit tests for cluster planning, fan-out and aggregation.

# this_file: tests/unit/test_cluster.py
"""

from __future__ import annotations

import asyncio
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hematch.client import FeatureVector
from hematch.cluster import (
    ClusterOrchestrator,
    LocalWorker,
    PartialResult,
    aggregate,
    describe_range,
    expected_partials,
    fan_out,
    plan,
)
from hematch.engine import AuthEngine, CompressedResult
from hematch.exceptions import (
    AlignmentError,
    BoundsError,
    ConfigError,
    IncompleteAggregationError,
    WorkerFaultError,
)
from hematch.registry import ShardStore


class BrokenWorker:
    """Worker whose connection always fails."""

    def __init__(self, name: str):
        self.name = name

    async def score(self, c_u):
        raise ConnectionRefusedError("connection refused")

    async def register(self, c_u, shard_index, local_index, attempt=None):
        raise ConnectionRefusedError("connection refused")

    async def revoke(self, c_u, shard_index, local_index, attempt):
        raise ConnectionRefusedError("connection refused")

    async def health(self):
        return {}


class StalledWorker(BrokenWorker):
    """Worker that never answers in time."""

    async def score(self, c_u):
        await asyncio.sleep(5)
        return []

    async def register(self, c_u, shard_index, local_index, attempt=None):
        await asyncio.sleep(5)


class UnreachableRevokeWorker(StalledWorker):
    """Stalls on registration and refuses revocation until it recovers."""

    def __init__(self, name: str):
        super().__init__(name)
        self.recovered = False

    async def revoke(self, c_u, shard_index, local_index, attempt):
        if not self.recovered:
            raise ConnectionRefusedError("connection refused")
        return False


class SlowStore(ShardStore):
    """Store whose first registration takes 0.3 s, before or after it lands."""

    def __init__(self, base: ShardStore, late_commit: bool):
        super().__init__(base.backend, base.public_key, base.galois_keys, base.layout)
        self.late_commit = late_commit
        self.delay = 0.3

    def register(self, c_u, shard_index, local_index, attempt=None):
        delay, self.delay = self.delay, 0.0
        if self.late_commit:
            time.sleep(delay)
            return super().register(c_u, shard_index, local_index, attempt)
        shard = super().register(c_u, shard_index, local_index, attempt)
        time.sleep(delay)
        return shard


def block_occupied(store: ShardStore, shard_index: int, local_index: int) -> bool:
    return shard_index in store.shard_indices and bool(store.get(shard_index).occupancy[local_index])


def split_store(full: ShardStore, shards: range) -> ShardStore:
    part = ShardStore(full.backend, full.public_key, full.galois_keys, full.layout)
    for index in shards:
        shard = full.get(index)
        part.load_packed_shard(index, shard.ciphertext, shard.occupancy)
    return part


@pytest.fixture
def packed_store(clear_store, clear_client, synthetic_small):
    """The 300-user synthetic registry in three shards."""
    vectors = [FeatureVector(v) for _, v, _ in synthetic_small.registry]
    capacity = clear_store.layout.capacity
    for shard_index in range(3):
        chunk = vectors[shard_index * capacity : (shard_index + 1) * capacity]
        occupancy = np.zeros(capacity, dtype=bool)
        occupancy[: len(chunk)] = True
        clear_store.load_packed_shard(shard_index, clear_client.pack_shard(chunk), occupancy)
    return clear_store


def local_workers(store, engine, cluster):
    return [
        LocalWorker(f"w{k}", split_store(store, shards), engine) for k, shards in enumerate(cluster.ranges)
    ]


class TestPlan:
    """Tests for shard range planning."""

    def test_remainder_goes_last(self):
        """10 shards over 3 workers gives 3, 3, 4."""
        cluster = plan(10, 3)
        assert cluster.sizes == (3, 3, 4)
        assert cluster.ranges[2] == range(6, 10)

    @given(st.integers(min_value=0, max_value=500), st.integers(min_value=1, max_value=12))
    def test_partition(self, shard_count, worker_count):
        """Ranges are contiguous, cover every shard once and differ by at most one."""
        cluster = plan(shard_count, worker_count)
        covered = [i for r in cluster.ranges for i in r]
        assert covered == list(range(shard_count))
        assert max(cluster.sizes) - min(cluster.sizes) <= 1

    def test_invalid(self):
        """Zero workers or negative shards are config errors."""
        with pytest.raises(ConfigError):
            plan(4, 0)
        with pytest.raises(ConfigError):
            plan(-1, 2)

    def test_owner(self):
        """Shards beyond the plan go to the last worker."""
        cluster = plan(4, 2)
        assert cluster.owner(1) == 0
        assert cluster.owner(3) == 1
        assert cluster.owner(40) == 1
        with pytest.raises(BoundsError):
            cluster.owner(-1)

    def test_describe_range(self):
        """Ranges print inclusively."""
        assert describe_range(range(3, 6)) == "shards 3..5"
        assert describe_range(range(0)) == "no shards"


class TestFanOut:
    """Tests for concurrent scoring and fault handling."""

    @pytest.mark.parametrize("worker_count", [1, 2, 3])
    def test_distribution_transparent(
        self, packed_store, clear_engine, clear_client, clear_backend, clear_keys, synthetic_small, worker_count
    ):
        """Any worker count decrypts to the single-process result."""
        _, query = synthetic_small.genuine[0]
        c_u = clear_client.pack_query(FeatureVector(query))
        reference = clear_engine.full_auth(c_u, packed_store.snapshot())
        cluster = plan(3, worker_count)
        orchestrator = ClusterOrchestrator(
            clear_backend, packed_store.layout, cluster, local_workers(packed_store, clear_engine, cluster)
        )
        results = asyncio.run(orchestrator.authenticate(c_u, 300))
        assert len(results) == len(reference) == 1
        np.testing.assert_array_equal(results[0].valid_slots, reference[0].valid_slots)
        np.testing.assert_allclose(
            clear_backend.decrypt(results[0].ciphertext, clear_keys.secret_key),
            clear_backend.decrypt(reference[0].ciphertext, clear_keys.secret_key),
            atol=1e-9,
        )

    def test_fault_names_range(self, packed_store, clear_engine, clear_client):
        """A refused connection reports the worker's shard range."""
        cluster = plan(6, 2)
        workers = [LocalWorker("w0", packed_store, clear_engine), BrokenWorker("w1")]
        c_u = clear_client.pack_query(FeatureVector(np.zeros(16)))
        with pytest.raises(WorkerFaultError, match=r"shards 3\.\.5") as info:
            asyncio.run(fan_out(c_u, cluster, workers))
        assert info.value.worker == "w1"
        assert info.value.shards == range(3, 6)

    def test_timeout(self, clear_client):
        """A worker past the deadline is a fault."""
        cluster = plan(2, 1)
        c_u = clear_client.pack_query(FeatureVector(np.zeros(16)))
        with pytest.raises(WorkerFaultError, match="timed out"):
            asyncio.run(fan_out(c_u, cluster, [StalledWorker("slow")], deadline=0.05))

    def test_worker_count_mismatch(self, clear_client):
        """Plans and worker lists must agree."""
        c_u = clear_client.pack_query(FeatureVector(np.zeros(16)))
        with pytest.raises(ConfigError):
            asyncio.run(fan_out(c_u, plan(2, 2), [BrokenWorker("w0")]))

    def test_register_routes_to_owner(self, clear_store, clear_engine, clear_client, clear_backend, clear_keys):
        """Enrollment reaches the worker owning the shard."""
        stores = [
            ShardStore(clear_backend, clear_keys.public_key, clear_keys.galois_keys) for _ in range(2)
        ]
        workers = [LocalWorker(f"w{k}", s, clear_engine) for k, s in enumerate(stores)]
        orchestrator = ClusterOrchestrator(clear_backend, clear_store.layout, plan(2, 2), workers)
        c_u = clear_client.pack_registration(FeatureVector(np.ones(16)))
        asyncio.run(orchestrator.register(c_u, 1, 4))
        assert len(stores[0]) == 0
        assert stores[1].get(1).occupancy[4]

    def test_register_fault(self, clear_store, clear_backend, clear_client):
        """A refused enrollment is a worker fault."""
        orchestrator = ClusterOrchestrator(clear_backend, clear_store.layout, plan(1, 1), [BrokenWorker("w0")])
        c_u = clear_client.pack_registration(FeatureVector(np.ones(16)))
        with pytest.raises(WorkerFaultError, match="unreachable"):
            asyncio.run(orchestrator.register(c_u, 0, 0))


class TestRegistrationFaults:
    """Tests for registrations whose outcome is unknown to the main server."""

    @pytest.mark.parametrize("late_commit", [False, True])
    def test_timed_out_registration_is_undone(
        self, clear_store, clear_engine, clear_client, clear_backend, clear_keys, make_vectors, late_commit
    ):
        """After a timeout the block ends up free, so the same allocation can be retried."""
        store = SlowStore(clear_store, late_commit)
        orchestrator = ClusterOrchestrator(
            clear_backend, store.layout, plan(1, 1), [LocalWorker("w0", store, clear_engine)], deadline=0.05
        )
        first, second = (clear_client.pack_registration(v) for v in make_vectors(2, seed=5))

        async def scenario():
            with pytest.raises(WorkerFaultError, match="timed out"):
                await orchestrator.register(first, 0, 0)
            await asyncio.sleep(0.5)
            occupied_after_fault = block_occupied(store, 0, 0)
            await orchestrator.register(second, 0, 0)
            return occupied_after_fault

        assert asyncio.run(scenario()) is False
        assert orchestrator.pending == {}
        assert store.get(0).registered == 1
        slots = clear_backend.decrypt(store.get(0).ciphertext, clear_keys.secret_key)
        np.testing.assert_allclose(slots[:16], make_vectors(2, seed=5)[1].values, atol=1e-9)

    def test_unrevocable_registration_stays_pending(self, clear_store, clear_backend, clear_client):
        """A block that could not be revoked blocks enrollment and is hidden from results."""
        worker = UnreachableRevokeWorker("w0")
        orchestrator = ClusterOrchestrator(clear_backend, clear_store.layout, plan(1, 1), [worker], deadline=0.05)
        c_u = clear_client.pack_registration(FeatureVector(np.ones(16)))
        with pytest.raises(WorkerFaultError, match="timed out"):
            asyncio.run(orchestrator.register(c_u, 17, 3))
        assert set(orchestrator.pending) == {(17, 3)}
        with pytest.raises(WorkerFaultError, match="still pending"):
            asyncio.run(orchestrator.register(c_u, 17, 3))

        query = clear_client.pack_query(FeatureVector(np.zeros(16)))
        everything = np.ones(clear_store.layout.slot_count, dtype=bool)
        masked = orchestrator.mask_pending(
            [CompressedResult(0, query, everything), CompressedResult(1, query, everything)]
        )
        assert masked[0].valid_slots.all()
        assert np.flatnonzero(~masked[1].valid_slots).tolist() == [16 * 3 + 1]

        worker.recovered = True
        asyncio.run(orchestrator.resolve_pending())
        assert orchestrator.pending == {}


class TestAggregate:
    """Tests for combining partial results."""

    def test_missing_partial(self, packed_store, clear_engine, clear_client, clear_backend):
        """An expected worker without a partial is reported."""
        cluster = plan(3, 2)
        c_u = clear_client.pack_query(FeatureVector(np.zeros(16)))
        partial = PartialResult("w0", tuple(clear_engine.full_auth(c_u, packed_store.snapshot()[:1])))
        expected = expected_partials(cluster, packed_store.layout, 300, ["w0", "w1"])
        assert expected == {0: {"w0", "w1"}}
        with pytest.raises(IncompleteAggregationError, match="w1"):
            aggregate([partial], clear_backend, expected)

    def test_overlap(self, packed_store, clear_engine, clear_client, clear_backend):
        """Two partials claiming the same slots are rejected."""
        c_u = clear_client.pack_query(FeatureVector(np.zeros(16)))
        results = tuple(clear_engine.full_auth(c_u, packed_store.snapshot()[:1]))
        with pytest.raises(AlignmentError):
            aggregate([PartialResult("a", results), PartialResult("b", results)], clear_backend)

    def test_empty(self, clear_backend):
        """No partials and no expectations give no results."""
        assert aggregate([], clear_backend) == []
