"""Plaintext reference pipeline and synthetic populations.

Nothing here imports the slot layout or the engine: scores are computed by
direct loops over users and the compressed-slot position by simulating
packing, scoring and rotation on plain lists.

# this_file: src/hematch/oracle.py
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt

from .constants import DEFAULT_THRESHOLD, FEATURE_WIDTH
from .exceptions import BoundsError, ParameterError, SyntheticSpecError
from .types import RealSequence, SlotVector
from .utils import write_feature_file

logger = logging.getLogger(__name__)

# HE noise bound the synthetic margins are measured against
NOISE_BOUND = 1e-2
MARGIN_FACTOR = 10.0


@dataclass
class ClearRegistry:
    """Registered vectors by global index."""

    entries: list[tuple[int, SlotVector, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        indices = [e[0] for e in self.entries]
        if len(set(indices)) != len(indices):
            raise ParameterError("clear registry indices must be unique")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[int, SlotVector, str]]:
        return iter(self.entries)

    def add(self, index: int, vector: RealSequence, user_id: str) -> None:
        if any(e[0] == index for e in self.entries):
            raise ParameterError(f"index {index} already registered")
        self.entries.append((index, np.asarray(vector, dtype=np.float64), user_id))

    @property
    def matrix(self) -> npt.NDArray[np.float64]:
        return np.stack([e[1] for e in self.entries])


def clear_score(
    registry: ClearRegistry, u: RealSequence, bias: RealSequence, weights: RealSequence
) -> dict[int, float]:
    """score_j = sum_t w_t * ((r_jt - u_t) + b_t)^2 for every registered j."""
    u = [float(x) for x in u]
    bias = [float(x) for x in bias]
    weights = [float(x) for x in weights]
    scores = {}
    for index, r, _ in registry:
        total = 0.0
        for t in range(len(u)):
            d = (float(r[t]) - u[t]) + bias[t]
            total += weights[t] * d * d
        scores[index] = total
    return scores


def clear_score_vectorized(
    registry: ClearRegistry, u: RealSequence, bias: RealSequence, weights: RealSequence
) -> dict[int, float]:
    """Second, array-based implementation of :func:`clear_score`."""
    if not len(registry):
        return {}
    diff = registry.matrix - np.asarray(u) + np.asarray(bias)
    values = np.einsum("jt,t->j", diff**2, np.asarray(weights, dtype=np.float64))
    return {e[0]: float(v) for e, v in zip(registry.entries, values, strict=True)}


def layout_oracle(n_registered: int, marker: int, slot_count: int, width: int = FEATURE_WIDTH) -> tuple[int, int]:
    """Simulate where the score of user ``marker`` lands after compression.

    Packs the marker's shard as a plain list, leaves the score at its block
    head, masks, rotates right by the shard's position in its output group
    and returns (output group, slot).
    """
    if not 0 <= marker < n_registered:
        raise BoundsError(f"marker {marker} outside [0, {n_registered})")
    capacity = slot_count // width
    shard = marker // capacity
    local = marker - shard * capacity
    # registration: block `local` of the shard, first slot carries the score after block_sum
    slots = [0.0] * slot_count
    for t in range(width):
        slots[local * width + t] = 1.0
    scored = [sum(slots[p : p + width]) if p % width == 0 else 0.0 for p in range(slot_count)]
    masked = [v if p % width == 0 else 0.0 for p, v in enumerate(scored)]
    offset = shard % width
    rotated = masked[-offset:] + masked[:-offset] if offset else masked
    hits = [p for p, v in enumerate(rotated) if v != 0.0]
    if len(hits) != 1:
        raise BoundsError(f"marker {marker} landed in {len(hits)} slots")
    return shard // width, hits[0]


def recover_index_reference(slot: int, slot_count: int, width: int = FEATURE_WIDTH) -> int:
    """capacity * (slot mod width) + slot div width."""
    return (slot_count // width) * (slot % width) + slot // width


@dataclass(frozen=True)
class SyntheticSpec:
    """Population parameters; genuine queries perturb a registered vector."""

    population: int
    genuine_noise: float = 0.05
    embedding_scale: float = 2.0
    seed: int = 0
    queries: int = 100
    width: int = FEATURE_WIDTH
    fc1_bias: float = 2.0
    threshold: float = DEFAULT_THRESHOLD

    @property
    def bias(self) -> SlotVector:
        return np.zeros(self.width)

    @property
    def weights(self) -> SlotVector:
        """Negative unit weights: the score is minus the squared distance."""
        return -np.ones(self.width)


@dataclass(frozen=True)
class SyntheticFixture:
    spec: SyntheticSpec
    registry: ClearRegistry
    genuine: list[tuple[int, SlotVector]]
    imposters: list[SlotVector]


def _logit_threshold(threshold: float) -> float:
    return math.log(threshold / (1.0 - threshold))


def gen_synthetic(spec: SyntheticSpec) -> SyntheticFixture:
    """Deterministic population with a checked decision margin.

    Raises:
        SyntheticSpecError: If any genuine or imposter decision lies within
            ten noise bounds of flipping
    """
    if spec.population < 1 or spec.queries < 0 or spec.genuine_noise < 0:
        raise SyntheticSpecError(f"invalid synthetic spec {spec}")
    rng = np.random.default_rng(spec.seed)
    vectors = rng.normal(0.0, spec.embedding_scale, size=(spec.population, spec.width))
    targets = rng.integers(0, spec.population, size=spec.queries)
    genuine = vectors[targets] + rng.normal(0.0, spec.genuine_noise, size=(spec.queries, spec.width))
    imposters = rng.normal(0.0, spec.embedding_scale, size=(spec.queries, spec.width))
    _check_margins(spec, vectors, targets, genuine, imposters)
    registry = ClearRegistry([(j, vectors[j], f"user-{j:06d}") for j in range(spec.population)])
    logger.debug(f"Generated synthetic population of {spec.population} (seed {spec.seed})")
    return SyntheticFixture(
        spec,
        registry,
        [(int(t), g) for t, g in zip(targets, genuine, strict=True)],
        list(imposters),
    )


def _logits(spec: SyntheticSpec, vectors: npt.NDArray[np.float64], queries: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    # -(|r|^2 - 2 r.u + |u|^2) without materializing (queries, population, width)
    sq = (vectors**2).sum(axis=1)[None, :] - 2 * queries @ vectors.T + (queries**2).sum(axis=1)[:, None]
    return spec.fc1_bias - sq


def _check_margins(
    spec: SyntheticSpec,
    vectors: npt.NDArray[np.float64],
    targets: npt.NDArray[np.int64],
    genuine: npt.NDArray[np.float64],
    imposters: npt.NDArray[np.float64],
) -> None:
    margin = MARGIN_FACTOR * NOISE_BOUND
    cut = _logit_threshold(spec.threshold)
    if len(genuine):
        logits = _logits(spec, vectors, genuine)
        rows = np.arange(len(targets))
        own = logits[rows, targets]
        logits[rows, targets] = -np.inf
        runner_up = logits.max(axis=1)
        if np.any(own - cut < margin) or np.any(own - runner_up < margin):
            raise SyntheticSpecError("genuine queries do not clear the threshold by the required margin")
    if len(imposters):
        best = _logits(spec, vectors, imposters).max(axis=1)
        if np.any(cut - best < margin):
            raise SyntheticSpecError("an imposter query comes within the margin of the threshold")


def write_fixture(fixture: SyntheticFixture, directory: Path) -> None:
    """Registry, genuine and imposter feature files with the seed in their headers."""
    spec = fixture.spec
    header = {"seed": str(spec.seed), "population": str(spec.population)}
    write_feature_file(directory / "registry.csv", [e[1] for e in fixture.registry], header)
    write_feature_file(
        directory / "genuine.csv",
        [g for _, g in fixture.genuine],
        {**header, "targets": " ".join(str(t) for t, _ in fixture.genuine)},
    )
    write_feature_file(directory / "imposters.csv", fixture.imposters, header)
