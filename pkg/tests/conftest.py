"""Pytest configuration and fixtures for hematch tests.

Expensive objects (parameter sets, lattice tables, key bundles) are
session-scoped; everything mutable is built per test.

# this_file: tests/conftest.py
"""

from __future__ import annotations

import json
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from hematch.client import ClientPipeline, FeatureVector
from hematch.engine import AuthEngine, ServerModelParams
from hematch.he import HeBackend, HeParams, KeyBundle, create_backend
from hematch.he.serialize import save_key_bundle
from hematch.layout import SlotLayout
from hematch.oracle import SyntheticFixture, SyntheticSpec, gen_synthetic
from hematch.registry import Registry, ShardStore

KEY_SEED = 7


@pytest.fixture(scope="session")
def clear_params() -> HeParams:
    """Test-profile parameters on the exact clear-slot backend."""
    return HeParams.test_profile("clear")


@pytest.fixture(scope="session")
def lattice_params() -> HeParams:
    """Test-profile parameters on the lattice backend (d = 4096)."""
    return HeParams.test_profile("lattice")


@pytest.fixture(scope="session")
def clear_backend(clear_params: HeParams) -> HeBackend:
    return create_backend(clear_params)


@pytest.fixture(scope="session")
def lattice_backend(lattice_params: HeParams) -> HeBackend:
    return create_backend(lattice_params)


@pytest.fixture(scope="session")
def clear_keys(clear_backend: HeBackend) -> KeyBundle:
    return clear_backend.keygen(KEY_SEED, signed_rotations=True)


@pytest.fixture(scope="session")
def lattice_keys(lattice_backend: HeBackend) -> KeyBundle:
    return lattice_backend.keygen(KEY_SEED, signed_rotations=True)


@pytest.fixture(params=["clear", "lattice"])
def backend_and_keys(request: pytest.FixtureRequest) -> tuple[HeBackend, KeyBundle]:
    """Both backends in turn, with their session keys."""
    backend = request.getfixturevalue(f"{request.param}_backend")
    keys = request.getfixturevalue(f"{request.param}_keys")
    return backend, keys


@pytest.fixture
def layout(clear_backend: HeBackend) -> SlotLayout:
    """Test-profile layout: 2048 slots, capacity 128."""
    return SlotLayout(clear_backend.slot_count)


@pytest.fixture
def production_layout() -> SlotLayout:
    """Production layout: 8192 slots, capacity 512."""
    return SlotLayout(8192)


@pytest.fixture
def clear_client(clear_backend: HeBackend, clear_keys: KeyBundle) -> ClientPipeline:
    return ClientPipeline(clear_backend, clear_keys.public_key, clear_keys.secret_key)


@pytest.fixture
def clear_store(clear_backend: HeBackend, clear_keys: KeyBundle) -> ShardStore:
    return ShardStore(clear_backend, clear_keys.public_key, clear_keys.galois_keys)


@pytest.fixture
def clear_registry(clear_store: ShardStore) -> Registry:
    return Registry(clear_store)


@pytest.fixture(scope="session")
def synthetic_small() -> SyntheticFixture:
    """300 users, 20 genuine and 20 imposter queries."""
    return gen_synthetic(SyntheticSpec(300, seed=11, queries=20))


@pytest.fixture
def synthetic_model(layout: SlotLayout, synthetic_small: SyntheticFixture) -> ServerModelParams:
    spec = synthetic_small.spec
    return ServerModelParams(layout, spec.bias, spec.weights)


@pytest.fixture
def clear_engine(
    clear_backend: HeBackend, clear_keys: KeyBundle, synthetic_model: ServerModelParams
) -> AuthEngine:
    return AuthEngine(clear_backend, clear_keys.evaluation_keys(), synthetic_model)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def make_vectors() -> Callable[..., list[FeatureVector]]:
    """Factory for seeded standard-normal feature vectors."""

    def make(count: int, seed: int = 0, width: int = 16) -> list[FeatureVector]:
        generator = np.random.default_rng(seed)
        return [FeatureVector(v) for v in generator.normal(0.0, 1.0, size=(count, width))]

    return make


@pytest.fixture
def model_file(tmp_path: Path) -> Path:
    """Model parameters matching the synthetic fixtures."""
    path = tmp_path / "model.json"
    path.write_text(
        json.dumps(
            {
                "fc16_bias": [0.0] * 16,
                "fc1_weights": [-1.0] * 16,
                "fc1_bias": 2.0,
                "threshold": 0.2,
            }
        )
    )
    return path


@pytest.fixture
def key_files(tmp_path: Path, clear_keys: KeyBundle, model_file: Path) -> dict[str, str]:
    """Clear-backend key files and model on disk, as config path entries."""
    keys = tmp_path / "keys"
    paths = {
        "public_key": keys / "public.key",
        "galois_key": keys / "galois.key",
        "relin_key": keys / "relin.key",
        "secret_key": keys / "secret.key",
    }
    save_key_bundle(clear_keys, paths["public_key"], paths["galois_key"], paths["relin_key"], paths["secret_key"])
    return {**{k: str(v) for k, v in paths.items()}, "model_path": str(model_file)}
