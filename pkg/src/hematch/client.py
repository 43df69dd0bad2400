"""Client side: feature finalization, packing and match decisions.

The client runs the first fully connected layer in the clear, encrypts the
resulting width-vector in registration or query layout, and after the server
replies decrypts the compressed scores, applies the FC-1 bias and sigmoid and
picks the best valid slot.

# this_file: src/hematch/client.py
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import numpy.typing as npt
from box import Box, BoxError

from .constants import DEFAULT_THRESHOLD, FEATURE_WIDTH
from .exceptions import ConfigError, HematchError, ParameterError, ShapeError
from .he.backend import Ciphertext, HeBackend
from .he.keys import PublicKey, SecretKey
from .layout import SlotLayout
from .types import BoolMask, RealSequence, SlotVector

logger = logging.getLogger(__name__)


def sigmoid(z: npt.ArrayLike) -> SlotVector:
    """Logistic function, stable for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class FeatureVector:
    """Client feature vector u = xA + b."""

    values: SlotVector

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ShapeError(f"feature vector must be one-dimensional, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("feature vector has non-finite entries")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class Fc16Params:
    """Affine client layer: ``a_matrix`` is n x width, ``bias`` has width entries."""

    a_matrix: npt.NDArray[np.float64]
    bias: SlotVector

    def __post_init__(self) -> None:
        a = np.array(self.a_matrix, dtype=np.float64)
        b = np.array(self.bias, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1:
            raise ShapeError(f"a_matrix must be n x width with n >= 1, got shape {a.shape}")
        if b.shape != (a.shape[1],):
            raise ShapeError(f"bias has shape {b.shape}, expected ({a.shape[1]},)")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ShapeError("FC-16 parameters must be finite")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "bias", b)

    @classmethod
    def identity(cls, width: int = FEATURE_WIDTH) -> Fc16Params:
        """Pass-through layer for precomputed feature vectors."""
        return cls(np.eye(width), np.zeros(width))

    @property
    def input_size(self) -> int:
        return int(self.a_matrix.shape[0])

    @property
    def width(self) -> int:
        return int(self.a_matrix.shape[1])


@dataclass(frozen=True)
class DecisionParams:
    fc1_bias: float = 0.0
    threshold: float = DEFAULT_THRESHOLD

    def __post_init__(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ParameterError(f"threshold must lie in (0, 1), got {self.threshold}")
        if not np.isfinite(self.fc1_bias):
            raise ParameterError("fc1_bias must be finite")


@dataclass(frozen=True)
class ModelParams:
    """Everything the model-parameter file carries."""

    fc16: Fc16Params
    fc1_weights: SlotVector
    decision: DecisionParams

    @property
    def width(self) -> int:
        return self.fc16.width


def load_model(path: Path, threshold: float | None = None) -> ModelParams:
    """Load model parameters from JSON.

    Fields: ``a_matrix`` (optional, row-major n x width), ``fc16_bias``,
    ``fc1_weights``, ``fc1_bias``, ``threshold``.

    Raises:
        ConfigError: If the file is missing, not JSON or inconsistent
    """
    try:
        data = Box.from_json(filename=str(path))
    except FileNotFoundError as e:
        raise ConfigError(f"model file {path} not found") from e
    except (BoxError, ValueError) as e:
        raise ConfigError(f"model file {path} is not a JSON object: {e}") from e
    return model_from_box(data, threshold)


def model_from_box(data: Box, threshold: float | None = None) -> ModelParams:
    try:
        bias = np.asarray(data.fc16_bias, dtype=np.float64)
        a = data.get("a_matrix")
        fc16 = Fc16Params(np.eye(bias.size) if a is None else np.asarray(a, dtype=np.float64), bias)
        weights = np.asarray(data.fc1_weights, dtype=np.float64)
        if weights.shape != (fc16.width,):
            raise ShapeError(f"fc1_weights has shape {weights.shape}, expected ({fc16.width},)")
        decision = DecisionParams(
            float(data.get("fc1_bias", 0.0)),
            float(threshold if threshold is not None else data.get("threshold", DEFAULT_THRESHOLD)),
        )
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid model parameters: {e}") from e
    except HematchError as e:
        raise ConfigError(f"invalid model parameters: {e}") from e
    return ModelParams(fc16, weights, decision)


def finalize_features(x: RealSequence, fc16: Fc16Params) -> FeatureVector:
    """u = xA + b."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (fc16.input_size,):
        raise ShapeError(f"input has shape {x.shape}, expected ({fc16.input_size},)")
    return FeatureVector(x @ fc16.a_matrix + fc16.bias)


@dataclass(frozen=True)
class Decision:
    """Outcome of a match decision.

    ``best_index`` and ``probability`` describe the best valid slot even when
    it falls below the threshold; both are None when no slot was valid.
    """

    matched: bool
    best_index: int | None = None
    probability: float | None = None

    @property
    def global_index(self) -> int | None:
        return self.best_index if self.matched else None

    def __str__(self) -> str:
        return f"match {self.best_index}" if self.matched else "no_match"


def pick_best(candidates: Sequence[tuple[npt.NDArray[np.int64], SlotVector]]) -> tuple[int, float] | None:
    """Highest score over (global indices, scores) pairs; lowest index wins ties."""
    indices = np.concatenate([c[0] for c in candidates]) if candidates else np.zeros(0, np.int64)
    if indices.size == 0:
        return None
    scores = np.concatenate([c[1] for c in candidates])
    order = np.lexsort((indices, -scores))
    return int(indices[order[0]]), float(scores[order[0]])


class ClientPipeline:
    """Encrypting client bound to a backend, a slot layout and its keys."""

    def __init__(
        self,
        backend: HeBackend,
        public_key: PublicKey,
        secret_key: SecretKey | None = None,
        width: int = FEATURE_WIDTH,
    ):
        self.backend = backend
        self.layout = SlotLayout(backend.slot_count, width)
        self.public_key = public_key
        self.secret_key = secret_key

    def _encrypt(self, slots: SlotVector) -> Ciphertext:
        return self.backend.encrypt(self.backend.encode(slots), self.public_key)

    def pack_registration(self, u: FeatureVector) -> Ciphertext:
        """u in slots 0..width-1, zeros elsewhere."""
        return self._encrypt(self.layout.place({0: u.values}))

    def pack_query(self, u: FeatureVector) -> Ciphertext:
        """u repeated in every block."""
        return self._encrypt(self.layout.tile(u.values))

    def pack_shard(self, vectors: Sequence[FeatureVector]) -> Ciphertext:
        """Encrypt up to ``capacity`` vectors directly in shard layout."""
        if len(vectors) > self.layout.capacity:
            raise ShapeError(f"{len(vectors)} vectors exceed shard capacity {self.layout.capacity}")
        return self._encrypt(self.layout.place({j: v.values for j, v in enumerate(vectors)}))

    def _require_secret(self) -> SecretKey:
        if self.secret_key is None:
            raise ParameterError("decisions need the client secret key")
        return self.secret_key

    def _logits(self, ct: Ciphertext, dp: DecisionParams) -> SlotVector:
        return self.backend.decrypt(ct, self._require_secret()) + dp.fc1_bias

    def _decide(self, candidates: list[tuple[npt.NDArray[np.int64], SlotVector]], dp: DecisionParams) -> Decision:
        best = pick_best(candidates)
        if best is None:
            logger.debug("No valid slots; no_match")
            return Decision(False)
        index, logit = best
        probability = float(sigmoid(logit))
        return Decision(probability >= dp.threshold, index, probability)

    def decide(
        self, compressed: Ciphertext, dp: DecisionParams, valid: BoolMask, group_index: int = 0
    ) -> Decision:
        """Decrypt one compressed result and threshold the best valid slot."""
        return self.decide_many([(group_index, compressed, valid)], dp)

    def decide_many(
        self, results: Sequence[tuple[int, Ciphertext, BoolMask]], dp: DecisionParams
    ) -> Decision:
        """Best valid slot over several output groups."""
        candidates = []
        for group_index, ct, valid in results:
            valid = np.asarray(valid, dtype=bool)
            if valid.shape != (self.layout.slot_count,):
                raise ShapeError(f"validity mask has shape {valid.shape}")
            indices = self.layout.recover_global_indices(group_index, np.flatnonzero(valid))
            candidates.append((indices, self._logits(ct, dp)[valid]))
        return self._decide(candidates, dp)

    def decide_uncompressed(
        self, results: Sequence[tuple[int, Ciphertext, BoolMask]], dp: DecisionParams
    ) -> Decision:
        """Decide on per-shard block-summed results (shard index, ciphertext, occupancy)."""
        candidates = []
        for shard_index, ct, occupancy in results:
            occ = self.layout.check_occupancy(occupancy)
            local = np.flatnonzero(occ)
            heads = self._logits(ct, dp)[local * self.layout.width]
            candidates.append((shard_index * self.layout.capacity + local.astype(np.int64), heads))
        return self._decide(candidates, dp)
