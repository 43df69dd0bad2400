"""Server-side encrypted scoring and result compression.

Per shard: subtract the tiled query, add the tiled FC-16 bias, square,
multiply by the tiled FC-1 weights, then rotate-and-add so every block head
holds its block's sum. Compression masks the block heads of occupied blocks
and interleaves up to ``width`` shards into one ciphertext by rotating each
right by its offset. Three multiplicative levels are consumed in total.

# this_file: src/hematch/engine.py
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .constants import FEATURE_WIDTH
from .exceptions import ShapeError
from .he.backend import Ciphertext, HeBackend, Plaintext
from .he.keys import EvaluationKeys
from .layout import SlotLayout
from .registry import RegistryShard
from .types import BoolMask, RealSequence, SlotVector

logger = logging.getLogger(__name__)


class ServerModelParams:
    """Tiled FC-16 bias and FC-1 weights with encodings cached per level and scale."""

    def __init__(self, layout: SlotLayout, bias: RealSequence, fc1_weights: RealSequence):
        self.layout = layout
        self.bias_tiled = layout.tile(bias)
        self.fc1_tiled = layout.tile(fc1_weights)
        self._cache: dict[tuple[str, int, float], Plaintext] = {}
        self._lock = threading.Lock()

    @classmethod
    def zeros(cls, layout: SlotLayout) -> ServerModelParams:
        return cls(layout, np.zeros(layout.width), np.zeros(layout.width))

    def encoded(self, name: str, backend: HeBackend, ct: Ciphertext) -> Plaintext:
        """``bias`` or ``fc1`` encoded at the ciphertext's level and scale."""
        key = (name, ct.level, ct.scale)
        with self._lock:
            cached = self._cache.get(key)
        if cached is None:
            values = self.bias_tiled if name == "bias" else self.fc1_tiled
            cached = backend.encode_like(values, ct)
            with self._lock:
                self._cache[key] = cached
        return cached


@dataclass(frozen=True)
class CompressionMask:
    """One-hot block-head mask of a shard's occupied blocks."""

    values: SlotVector

    @classmethod
    def from_occupancy(cls, layout: SlotLayout, occupancy: BoolMask) -> CompressionMask:
        return cls(layout.head_mask(occupancy))


@dataclass(frozen=True)
class CompressedResult:
    """Scores of up to ``width`` shards of one output group, at level 0.

    ``valid_slots`` marks the slots that hold a registered user's score.
    """

    group_index: int
    ciphertext: Ciphertext
    valid_slots: BoolMask


@dataclass(frozen=True)
class ShardResult:
    """Uncompressed block-summed scores of one shard."""

    shard_index: int
    ciphertext: Ciphertext
    occupancy: BoolMask


class AuthEngine:
    """Scores queries against registry shards using evaluation keys only."""

    def __init__(
        self,
        backend: HeBackend,
        keys: EvaluationKeys,
        model: ServerModelParams | None = None,
        width: int = FEATURE_WIDTH,
    ):
        self.backend = backend
        self.keys = keys
        self.layout = SlotLayout(backend.slot_count, width)
        self.model = model or ServerModelParams.zeros(self.layout)

    def score_shard(self, c_r: Ciphertext, c_u: Ciphertext) -> Ciphertext:
        """Block-summed scores sum_t w_t * ((r_t - u_t) + b_t)^2 at every block head."""
        be = self.backend
        a = be.sub(c_r, c_u)
        a = be.add_plain(a, self.model.encoded("bias", be, a))
        a = be.mul(a, a, self.keys.relin_key)
        a = be.mul_plain(a, self.model.encoded("fc1", be, a))
        return self.block_sum(a)

    def block_sum(self, a: Ciphertext) -> Ciphertext:
        """Slot p becomes the sum of slots p .. p+width-1 (cyclic)."""
        acc = a
        for step in self.layout.block_sum_steps:
            acc = self.backend.add(acc, self.backend.rotate(acc, step, self.keys.galois_keys))
        return acc

    def compress(
        self,
        scored: Sequence[Ciphertext],
        masks: Sequence[CompressionMask],
        offsets: Sequence[int] | None = None,
    ) -> Ciphertext:
        """Sum of mask_i * scored_i rotated right by offset_i.

        Offsets default to list positions. Evaluated as a Horner chain from the
        largest offset down so each rotation covers only the gap to the next.

        Raises:
            ShapeError: If more than width shards are given or offsets collide
        """
        offsets = list(range(len(scored))) if offsets is None else list(offsets)
        width = self.layout.width
        if not 1 <= len(scored) <= width:
            raise ShapeError(f"compress takes 1..{width} shards, got {len(scored)}")
        if len(masks) != len(scored) or len(offsets) != len(scored):
            raise ShapeError("scored, masks and offsets differ in length")
        if len(set(offsets)) != len(offsets) or any(not 0 <= o < width for o in offsets):
            raise ShapeError(f"offsets must be distinct values in [0, {width}), got {offsets}")
        be = self.backend
        masked = [
            be.mul_plain(ct, be.encode_like(m.values, ct))
            for ct, m in zip(scored, masks, strict=True)
        ]
        order = sorted(range(len(masked)), key=lambda i: -offsets[i])
        acc = masked[order[0]]
        for prev, cur in zip(order, order[1:], strict=False):
            acc = be.rotate(acc, offsets[cur] - offsets[prev], self.keys.galois_keys)
            acc = be.add(acc, masked[cur])
        if offsets[order[-1]]:
            acc = be.rotate(acc, -offsets[order[-1]], self.keys.galois_keys)
        return acc

    def full_auth(self, c_u: Ciphertext, shards: Sequence[RegistryShard]) -> list[CompressedResult]:
        """Score every shard and compress each output group (width shards)."""
        groups: dict[int, list[tuple[int, RegistryShard]]] = {}
        for shard in shards:
            group, offset = self.layout.group_of(shard.shard_index)
            groups.setdefault(group, []).append((offset, shard))
        results = []
        for group in sorted(groups):
            members = groups[group]
            scored = [self.score_shard(s.ciphertext, c_u) for _, s in members]
            masks = [CompressionMask.from_occupancy(self.layout, s.occupancy) for _, s in members]
            offsets = [o for o, _ in members]
            ct = self.compress(scored, masks, offsets)
            valid = self.layout.group_validity({o: s.occupancy for o, s in members})
            results.append(CompressedResult(group, ct, valid))
        logger.debug(f"Scored {len(shards)} shards into {len(results)} compressed results")
        return results

    def full_auth_uncompressed(self, c_u: Ciphertext, shards: Sequence[RegistryShard]) -> list[ShardResult]:
        """Per-shard block-summed scores without masking or interleaving."""
        return [
            ShardResult(s.shard_index, self.score_shard(s.ciphertext, c_u), s.occupancy.copy())
            for s in shards
        ]
