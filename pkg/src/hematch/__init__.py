"""hematch: encrypted 1:N biometric matching.

Clients encrypt feature vectors under a leveled slot-homomorphic scheme;
servers store, score and compress matches on ciphertexts; only the client
can decrypt the result and decide.

# this_file: src/hematch/__init__.py

Examples:
    >>> from hematch import ClientPipeline, AuthEngine, HeParams, create_backend
    >>> backend = create_backend(HeParams.test_profile("clear"))
    >>> keys = backend.keygen(seed=1)
    >>> client = ClientPipeline(backend, keys.public_key, keys.secret_key)
"""

from __future__ import annotations

try:
    from ._version import __version__
except ImportError:
    # Fallback version when not installed via pip
    __version__ = "0.0.0+unknown"

from .client import (
    ClientPipeline,
    Decision,
    DecisionParams,
    Fc16Params,
    FeatureVector,
    ModelParams,
    finalize_features,
    load_model,
)
from .cluster import ClusterOrchestrator, ClusterPlan, aggregate, fan_out, plan
from .engine import AuthEngine, CompressedResult, CompressionMask, ServerModelParams
from .exceptions import (
    AlignmentError,
    BoundsError,
    ConfigError,
    ConflictError,
    DecodeError,
    DepthError,
    FormatError,
    HematchError,
    IdentityNotFoundError,
    IncompleteAggregationError,
    KeyMaterialError,
    ParameterError,
    ProtocolError,
    ShapeError,
    SyntheticSpecError,
    WorkerFaultError,
)
from .he import Ciphertext, HeBackend, HeParams, KeyBundle, Plaintext, create_backend
from .layout import SlotLayout
from .oracle import ClearRegistry, SyntheticSpec, clear_score, gen_synthetic, layout_oracle
from .registry import IdentityMap, Registry, RegistryShard, ShardStore

__all__ = [
    "AlignmentError",
    "AuthEngine",
    "BoundsError",
    "Ciphertext",
    "ClearRegistry",
    "ClientPipeline",
    "ClusterOrchestrator",
    "ClusterPlan",
    "CompressedResult",
    "CompressionMask",
    "ConfigError",
    "ConflictError",
    "Decision",
    "DecisionParams",
    "DecodeError",
    "DepthError",
    "Fc16Params",
    "FeatureVector",
    "FormatError",
    "HeBackend",
    "HeParams",
    "HematchError",
    "IdentityMap",
    "IdentityNotFoundError",
    "IncompleteAggregationError",
    "KeyBundle",
    "KeyMaterialError",
    "ModelParams",
    "ParameterError",
    "Plaintext",
    "ProtocolError",
    "Registry",
    "RegistryShard",
    "ServerModelParams",
    "ShapeError",
    "ShardStore",
    "SlotLayout",
    "SyntheticSpec",
    "SyntheticSpecError",
    "WorkerFaultError",
    "__version__",
    "aggregate",
    "clear_score",
    "create_backend",
    "fan_out",
    "finalize_features",
    "gen_synthetic",
    "layout_oracle",
    "load_model",
    "plan",
]
