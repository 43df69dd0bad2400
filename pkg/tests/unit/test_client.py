"""Unit tests for the client pipeline and match decisions.

# this_file: tests/unit/test_client.py
"""

from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hematch.client import (
    ClientPipeline,
    Decision,
    DecisionParams,
    Fc16Params,
    FeatureVector,
    finalize_features,
    load_model,
    pick_best,
    sigmoid,
)
from hematch.exceptions import ConfigError, ParameterError, ShapeError
from hematch.oracle import ClearRegistry, clear_score

finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


class TestScoreIdentity:
    """Algebraic identities behind scoring finalized features."""

    @settings(max_examples=1000)
    @given(
        arrays(np.float64, 16, elements=finite),
        arrays(np.float64, 16, elements=finite),
        arrays(np.float64, 16, elements=finite),
        arrays(np.float64, 16, elements=finite),
    )
    def test_expansion(self, r, u, b, w):
        """sum w((r - u) + b)^2 = sum w(r - u)^2 + 2 sum w b (r - u) + sum w b^2."""
        registry = ClearRegistry([(0, r, "a")])
        expected = float(np.sum(w * (r - u) ** 2) + 2 * np.sum(w * b * (r - u)) + np.sum(w * b**2))
        assert clear_score(registry, u, b, w)[0] == pytest.approx(expected, rel=1e-9, abs=1e-6)

    @settings(max_examples=1000)
    @given(
        st.integers(min_value=0, max_value=2**32 - 1),
        st.integers(min_value=1, max_value=64),
        st.sampled_from([1e-3, 1.0, 1e3]),
    )
    def test_difference_of_finalized_features(self, seed, n, magnitude):
        """(x1 - x2)A + b = (x1A + b) - (x2A + b) + b to within 1e-12 of the term sizes."""
        rng = np.random.default_rng(seed)
        a_matrix = rng.normal(0.0, magnitude, size=(n, 16))
        bias = rng.normal(0.0, magnitude, size=16)
        x1, x2 = rng.normal(0.0, magnitude, size=(2, n))
        fc16 = Fc16Params(a_matrix, bias)
        direct = finalize_features(x1 - x2, fc16).values
        split = finalize_features(x1, fc16).values - finalize_features(x2, fc16).values + bias
        term_size = (np.abs(x1) + np.abs(x2)) @ np.abs(a_matrix) + np.abs(bias)
        assert np.all(np.abs(direct - split) <= 1e-12 * term_size)

    @settings(max_examples=200)
    @given(st.integers(min_value=0, max_value=2**32 - 1))
    def test_server_score_sees_input_difference(self, seed):
        """Scoring two finalized vectors equals FC-1 applied to (x1 - x2)A + b."""
        rng = np.random.default_rng(seed)
        fc16 = Fc16Params(rng.normal(size=(32, 16)), rng.normal(size=16))
        weights = rng.normal(size=16)
        x1, x2 = rng.normal(size=(2, 32))
        registered = finalize_features(x1, fc16).values
        query = finalize_features(x2, fc16)
        hidden = finalize_features(x1 - x2, fc16).values
        score = clear_score(ClearRegistry([(0, registered, "a")]), query.values, fc16.bias, weights)[0]
        expected = float(np.sum(weights * hidden**2))
        assert abs(score - expected) <= 1e-9 * float(np.sum(np.abs(weights) * hidden**2))


class TestFeatures:
    """Tests for feature vectors and the FC-16 layer."""

    def test_feature_vector_validation(self):
        """Vectors must be one-dimensional and finite."""
        with pytest.raises(ShapeError):
            FeatureVector(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            FeatureVector(np.array([1.0, np.nan]))
        assert len(FeatureVector([1.0, 2.0])) == 2

    def test_identity_layer(self):
        """The identity layer passes features through."""
        x = np.arange(16.0)
        np.testing.assert_array_equal(finalize_features(x, Fc16Params.identity()).values, x)

    def test_affine_layer(self):
        """u = xA + b for a 3 x 16 layer."""
        a = np.arange(48.0).reshape(3, 16)
        b = np.full(16, 0.5)
        x = np.array([1.0, 0.0, 2.0])
        u = finalize_features(x, Fc16Params(a, b))
        np.testing.assert_allclose(u.values, a[0] + 2 * a[2] + 0.5)

    def test_input_shape(self):
        """Inputs must match the layer's row count."""
        with pytest.raises(ShapeError):
            finalize_features(np.ones(4), Fc16Params.identity())

    def test_bias_shape(self):
        """The bias must have one entry per column."""
        with pytest.raises(ShapeError):
            Fc16Params(np.eye(16), np.zeros(15))


class TestModelFile:
    """Tests for loading model parameters."""

    def test_load(self, model_file):
        """The synthetic model file loads with the identity layer."""
        model = load_model(model_file)
        assert model.width == 16
        assert model.decision == DecisionParams(2.0, 0.2)
        np.testing.assert_array_equal(model.fc1_weights, -np.ones(16))

    def test_threshold_override(self, model_file):
        """An explicit threshold replaces the file's."""
        assert load_model(model_file, 0.5).decision.threshold == 0.5

    def test_missing(self, tmp_path):
        """A missing model file is a config error."""
        with pytest.raises(ConfigError, match="not found"):
            load_model(tmp_path / "absent.json")

    def test_inconsistent(self, tmp_path):
        """Weights of the wrong width are rejected."""
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"fc16_bias": [0.0] * 16, "fc1_weights": [1.0] * 8}))
        with pytest.raises(ConfigError):
            load_model(path)

    @pytest.mark.parametrize("threshold", [0.0, 1.0, -0.5])
    def test_threshold_range(self, threshold):
        """Thresholds lie strictly between 0 and 1."""
        with pytest.raises(ParameterError):
            DecisionParams(0.0, threshold)


class TestDecisions:
    """Tests for the sigmoid, tie-breaking and decrypted decisions."""

    def test_sigmoid(self):
        """Stable at the extremes, one half at zero."""
        values = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
        np.testing.assert_allclose(values, [0.0, 0.5, 1.0])
        assert np.all(np.isfinite(values))

    def test_pick_best_tie(self):
        """Equal scores resolve to the lowest index."""
        candidates = [(np.array([5, 9]), np.array([1.0, 0.5])), (np.array([2]), np.array([1.0]))]
        assert pick_best(candidates) == (2, 1.0)

    def test_pick_best_empty(self):
        """No candidates gives None."""
        assert pick_best([]) is None
        assert pick_best([(np.zeros(0, np.int64), np.zeros(0))]) is None

    def test_decision_str(self):
        """Decisions print as match or no_match."""
        assert str(Decision(True, 4, 0.9)) == "match 4"
        assert str(Decision(False, 4, 0.1)) == "no_match"
        assert Decision(False, 4, 0.1).global_index is None

    @settings(max_examples=100)
    @given(
        st.integers(min_value=0, max_value=2**32 - 1),
        st.sampled_from([lambda s: 3.0 * s + 7.0, np.cbrt, lambda s: np.exp(s / 10.0)]),
    )
    def test_best_index_survives_increasing_transform(self, clear_backend, clear_keys, seed, transform):
        """A strictly increasing map of every score leaves the chosen index unchanged."""
        client = ClientPipeline(clear_backend, clear_keys.public_key, clear_keys.secret_key)
        rng = np.random.default_rng(seed)
        scores = rng.permutation(clear_backend.slot_count) * 0.01 - 10.0
        valid = rng.random(clear_backend.slot_count) < 0.3
        valid[rng.integers(clear_backend.slot_count)] = True
        dp = DecisionParams()

        def best(values):
            ct = clear_backend.encrypt(clear_backend.encode(values), clear_keys.public_key)
            return client.decide(ct, dp, valid).best_index

        slots = np.flatnonzero(valid)
        expected = client.layout.recover_index(int(slots[np.argmax(scores[slots])]))
        assert best(scores) == best(transform(scores)) == expected

    def test_registration_layout(self, clear_client, clear_backend, clear_keys):
        """Registration fills block 0 only; queries repeat in every block."""
        u = FeatureVector(np.arange(16.0))
        reg = clear_backend.decrypt(clear_client.pack_registration(u), clear_keys.secret_key)
        np.testing.assert_allclose(reg[:16], u.values, atol=1e-9)
        assert np.abs(reg[16:]).max() < 1e-9
        query = clear_backend.decrypt(clear_client.pack_query(u), clear_keys.secret_key)
        np.testing.assert_allclose(query[-16:], u.values, atol=1e-9)

    def test_pack_shard_capacity(self, clear_client, make_vectors):
        """More vectors than blocks are rejected."""
        with pytest.raises(ShapeError):
            clear_client.pack_shard(make_vectors(129))

    def test_genuine_match(self, clear_client, clear_registry, clear_engine, make_vectors):
        """Querying a registered vector matches its index."""
        vectors = make_vectors(3, seed=5)
        for i, v in enumerate(vectors):
            clear_registry.register(clear_client.pack_registration(v), f"user-{i}")
        results = clear_engine.full_auth(clear_client.pack_query(vectors[1]), clear_registry.store.snapshot())
        decision = clear_client.decide_many(
            [(r.group_index, r.ciphertext, r.valid_slots) for r in results], DecisionParams(2.0, 0.2)
        )
        assert decision.matched
        assert decision.global_index == 1
        assert decision.probability == pytest.approx(float(sigmoid(2.0)), abs=1e-6)

    def test_uncompressed_agrees(self, clear_client, clear_registry, clear_engine, make_vectors):
        """Per-shard decisions pick the same user."""
        vectors = make_vectors(4, seed=6)
        for i, v in enumerate(vectors):
            clear_registry.register(clear_client.pack_registration(v), f"user-{i}")
        c_u = clear_client.pack_query(vectors[3])
        shards = clear_registry.store.snapshot()
        results = clear_engine.full_auth_uncompressed(c_u, shards)
        decision = clear_client.decide_uncompressed(
            [(r.shard_index, r.ciphertext, r.occupancy) for r in results], DecisionParams(2.0, 0.2)
        )
        assert decision.global_index == 3

    def test_imposter_rejected(self, clear_client, clear_registry, clear_engine, make_vectors):
        """A distant query falls below the threshold but still reports its best slot."""
        vectors = make_vectors(2, seed=7)
        for i, v in enumerate(vectors):
            clear_registry.register(clear_client.pack_registration(v), f"user-{i}")
        far = FeatureVector(np.full(16, 50.0))
        results = clear_engine.full_auth(clear_client.pack_query(far), clear_registry.store.snapshot())
        decision = clear_client.decide_many(
            [(r.group_index, r.ciphertext, r.valid_slots) for r in results], DecisionParams(2.0, 0.2)
        )
        assert not decision.matched
        assert decision.best_index in (0, 1)

    def test_no_valid_slots(self, clear_client):
        """An all-invalid mask gives no_match with no candidate."""
        ct = clear_client.pack_query(FeatureVector(np.zeros(16)))
        decision = clear_client.decide(ct, DecisionParams(), np.zeros(2048, dtype=bool))
        assert decision == Decision(False)

    def test_mask_shape(self, clear_client):
        """Validity masks must cover every slot."""
        ct = clear_client.pack_query(FeatureVector(np.zeros(16)))
        with pytest.raises(ShapeError):
            clear_client.decide(ct, DecisionParams(), np.zeros(16, dtype=bool))

    def test_decide_needs_secret(self, clear_backend, clear_keys):
        """A client without the secret key cannot decide."""
        client = ClientPipeline(clear_backend, clear_keys.public_key)
        ct = client.pack_query(FeatureVector(np.zeros(16)))
        with pytest.raises(ParameterError):
            client.decide(ct, DecisionParams(), np.ones(2048, dtype=bool))
