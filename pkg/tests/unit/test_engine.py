"""Unit tests for encrypted scoring and compression.

# this_file: tests/unit/test_engine.py
"""

from __future__ import annotations

import numpy as np
import pytest

from hematch.client import ClientPipeline, FeatureVector
from hematch.engine import AuthEngine, CompressionMask, ServerModelParams
from hematch.exceptions import DepthError, ShapeError
from hematch.he import HeParams, create_backend
from hematch.layout import SlotLayout
from hematch.oracle import clear_score, layout_oracle
from hematch.registry import ShardStore

EXACT = 1e-9


def decrypt(backend, keys, ct):
    return backend.decrypt(ct, keys.secret_key)


def populated_store(backend, keys, client, vectors, layout):
    """Bulk-pack vectors into consecutive shards."""
    store = ShardStore(backend, keys.public_key, keys.galois_keys, layout)
    for shard_index in range(layout.shard_count(len(vectors))):
        chunk = vectors[shard_index * layout.capacity : (shard_index + 1) * layout.capacity]
        occupancy = np.zeros(layout.capacity, dtype=bool)
        occupancy[: len(chunk)] = True
        store.load_packed_shard(shard_index, client.pack_shard(chunk), occupancy)
    return store


class TestScoring:
    """Tests for per-shard scoring."""

    def test_block_sum(self, clear_engine, clear_backend, clear_keys):
        """Every block head holds its block's sum."""
        values = np.arange(2048.0)
        ct = clear_backend.encrypt(clear_backend.encode(values), clear_keys.public_key)
        summed = decrypt(clear_backend, clear_keys, clear_engine.block_sum(ct))
        heads = summed[::16]
        np.testing.assert_allclose(heads, values.reshape(128, 16).sum(axis=1), atol=EXACT)

    def test_score_shard(self, clear_engine, clear_client, clear_backend, clear_keys, make_vectors):
        """Heads hold -|r_j - u|^2 with the synthetic model."""
        vectors = make_vectors(5, seed=2)
        u = make_vectors(1, seed=9)[0]
        c_r = clear_client.pack_shard(vectors)
        scored = decrypt(clear_backend, clear_keys, clear_engine.score_shard(c_r, clear_client.pack_query(u)))
        expected = [-np.sum((v.values - u.values) ** 2) for v in vectors]
        np.testing.assert_allclose(scored[:80:16], expected, atol=EXACT)

    def test_score_consumes_two_levels(self, clear_engine, clear_client, make_vectors):
        """The square and the weight multiply each drop a level."""
        v = make_vectors(1)[0]
        scored = clear_engine.score_shard(clear_client.pack_registration(v), clear_client.pack_query(v))
        assert scored.level == 1


class TestCompression:
    """Tests for masking and interleaving."""

    def test_compress_offsets(self, clear_engine, clear_backend, clear_keys, layout):
        """Shard i lands in slots congruent to its offset mod 16."""
        scored, masks = [], []
        for i in range(3):
            values = np.zeros(2048)
            values[::16] = i + 1.0
            scored.append(clear_backend.encrypt(clear_backend.encode(values, level=1), clear_keys.public_key))
            masks.append(CompressionMask.from_occupancy(layout, np.ones(128, dtype=bool)))
        out = decrypt(clear_backend, clear_keys, clear_engine.compress(scored, masks, [0, 5, 2]))
        assert out[0] == pytest.approx(1.0)
        assert out[5] == pytest.approx(2.0)
        assert out[2] == pytest.approx(3.0)
        assert np.count_nonzero(np.abs(out) > EXACT) == 3 * 128

    def test_masking_drops_unoccupied(self, clear_engine, clear_backend, clear_keys, layout):
        """Heads of empty blocks are zeroed."""
        values = np.ones(2048)
        ct = clear_backend.encrypt(clear_backend.encode(values, level=1), clear_keys.public_key)
        occupancy = np.zeros(128, dtype=bool)
        occupancy[[0, 7]] = True
        out = decrypt(
            clear_backend,
            clear_keys,
            clear_engine.compress([ct], [CompressionMask.from_occupancy(layout, occupancy)]),
        )
        assert np.flatnonzero(np.abs(out) > EXACT).tolist() == [0, 112]

    def test_compress_rejects(self, clear_engine, clear_backend, clear_keys, layout):
        """Colliding offsets and oversize groups are shape errors."""
        ct = clear_backend.encrypt(clear_backend.encode(np.zeros(2048), level=1), clear_keys.public_key)
        mask = CompressionMask.from_occupancy(layout, np.ones(128, dtype=bool))
        with pytest.raises(ShapeError):
            clear_engine.compress([ct, ct], [mask, mask], [1, 1])
        with pytest.raises(ShapeError):
            clear_engine.compress([ct] * 17, [mask] * 17)
        with pytest.raises(ShapeError):
            clear_engine.compress([ct], [mask], [16])

    def test_marker_position_production(self):
        """User 513 of 514 lands at slot 17 of group 0 with 8192 slots."""
        params = HeParams.production("clear")
        backend = create_backend(params)
        keys = backend.keygen(signed_rotations=True)
        layout = SlotLayout(backend.slot_count)
        client = ClientPipeline(backend, keys.public_key, keys.secret_key)
        vectors = [FeatureVector(np.zeros(16)) for _ in range(514)]
        vectors[513] = FeatureVector(np.ones(16))
        store = populated_store(backend, keys, client, vectors, layout)
        model = ServerModelParams(layout, np.zeros(16), -np.ones(16))
        engine = AuthEngine(backend, keys.evaluation_keys(), model)
        results = engine.full_auth(client.pack_query(FeatureVector(np.zeros(16))), store.snapshot())
        assert len(results) == 1
        out = decrypt(backend, keys, results[0].ciphertext)
        assert np.flatnonzero(np.abs(out) > EXACT).tolist() == [17]
        assert out[17] == pytest.approx(-16.0)
        assert layout_oracle(514, 513, 8192) == (0, 17)
        assert layout.recover_index(17) == 513
        assert results[0].valid_slots.sum() == 514


class TestFullAuth:
    """Tests for end-to-end scoring against the plaintext reference."""

    def test_matches_clear_score(self, clear_backend, clear_keys, clear_client, clear_engine, layout, synthetic_small):
        """Every valid slot equals the reference score of its user."""
        spec = synthetic_small.spec
        vectors = [FeatureVector(v) for _, v, _ in synthetic_small.registry]
        store = populated_store(clear_backend, clear_keys, clear_client, vectors, layout)
        _, query = synthetic_small.genuine[0]
        results = clear_engine.full_auth(clear_client.pack_query(FeatureVector(query)), store.snapshot())
        expected = clear_score(synthetic_small.registry, query, spec.bias, spec.weights)
        seen = {}
        for r in results:
            out = decrypt(clear_backend, clear_keys, r.ciphertext)
            for slot in np.flatnonzero(r.valid_slots):
                seen[layout.recover_global_index(r.group_index, int(slot))] = out[slot]
        assert seen.keys() == expected.keys()
        for index, score in expected.items():
            assert seen[index] == pytest.approx(score, abs=EXACT)

    def test_output_groups(self, clear_backend, clear_keys, clear_client, clear_engine, layout, make_vectors):
        """Seventeen shards need two compressed outputs."""
        store = ShardStore(clear_backend, clear_keys.public_key, clear_keys.galois_keys)
        ct = clear_client.pack_shard(make_vectors(1))
        occupancy = np.zeros(128, dtype=bool)
        occupancy[0] = True
        for shard_index in range(17):
            store.load_packed_shard(shard_index, ct, occupancy)
        results = clear_engine.full_auth(clear_client.pack_query(make_vectors(1)[0]), store.snapshot())
        assert [r.group_index for r in results] == [0, 1]
        assert results[1].valid_slots.sum() == 1
        assert all(r.ciphertext.level == 0 for r in results)

    @pytest.mark.slow
    def test_lattice_matches_clear(self, lattice_backend, lattice_keys, make_vectors):
        """Lattice scores track the reference within the noise bound."""
        layout = SlotLayout(lattice_backend.slot_count)
        client = ClientPipeline(lattice_backend, lattice_keys.public_key, lattice_keys.secret_key)
        vectors = make_vectors(20, seed=4)
        store = populated_store(lattice_backend, lattice_keys, client, vectors, layout)
        engine = AuthEngine(
            lattice_backend,
            lattice_keys.evaluation_keys(),
            ServerModelParams(layout, np.zeros(16), -np.ones(16)),
        )
        u = vectors[7]
        results = engine.full_auth(client.pack_query(u), store.snapshot())
        out = decrypt(lattice_backend, lattice_keys, results[0].ciphertext)
        for j, v in enumerate(vectors):
            assert out[layout.slot_of(j)] == pytest.approx(-np.sum((v.values - u.values) ** 2), abs=1e-2)

    def test_depth_exhausted(self, make_vectors):
        """A two-level chain cannot finish compression."""
        backend = create_backend(HeParams.with_depth(4096, 2, "clear"))
        keys = backend.keygen(1)
        layout = SlotLayout(backend.slot_count)
        client = ClientPipeline(backend, keys.public_key, keys.secret_key)
        store = populated_store(backend, keys, client, make_vectors(2), layout)
        engine = AuthEngine(backend, keys.evaluation_keys())
        with pytest.raises(DepthError):
            engine.full_auth(client.pack_query(make_vectors(1)[0]), store.snapshot())
