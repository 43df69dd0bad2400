"""Slot layout shared by client packing, registry shards and compression.

A shard ciphertext holds ``capacity`` feature blocks of ``width`` slots each.
After scoring, block j's score sits at its head slot ``width·j``. Compression
rotates shard i of a group right by ``i mod width`` so that up to ``width``
shards interleave inside one ciphertext.

# this_file: src/hematch/layout.py
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from .constants import FEATURE_WIDTH
from .exceptions import BoundsError, ParameterError, ShapeError
from .types import BoolMask, RealSequence, SlotVector


@dataclass(frozen=True)
class SlotLayout:
    """Block layout of ``slot_count`` slots into ``width``-wide feature blocks."""

    slot_count: int
    width: int = FEATURE_WIDTH

    def __post_init__(self) -> None:
        w = self.width
        if w < 1 or w & (w - 1):
            raise ParameterError(f"feature width must be a power of two, got {w}")
        if self.slot_count % w or self.slot_count < w:
            raise ParameterError(f"feature width {w} does not divide {self.slot_count} slots")

    @property
    def capacity(self) -> int:
        """Feature vectors per shard."""
        return self.slot_count // self.width

    @property
    def group_span(self) -> int:
        """Global indices covered by one compressed output (width shards)."""
        return self.width * self.capacity

    @property
    def block_sum_steps(self) -> list[int]:
        """Rotation steps width/2, ..., 2, 1."""
        steps = []
        s = self.width // 2
        while s:
            steps.append(s)
            s //= 2
        return steps

    # -- index arithmetic ---------------------------------------------------

    def allocate(self, n_registered: int) -> tuple[int, int]:
        """Shard and local index for the next registration."""
        if n_registered < 0:
            raise BoundsError(f"registered count must be >= 0, got {n_registered}")
        return divmod(n_registered, self.capacity)

    def global_index(self, shard_index: int, local_index: int) -> int:
        return shard_index * self.capacity + local_index

    def shard_count(self, n_registered: int) -> int:
        return -(-n_registered // self.capacity)

    def group_count(self, shard_count: int) -> int:
        return -(-shard_count // self.width)

    def group_of(self, shard_index: int) -> tuple[int, int]:
        """Output group and compression offset of a shard."""
        return divmod(shard_index, self.width)

    def recover_index(self, slot: int) -> int:
        """Map a compressed slot to its index within the output group.

        Slot ``width·q + r`` holds shard offset r, local user q, i.e. index
        ``capacity·r + q``.

        Raises:
            BoundsError: If slot lies outside [0, slot_count)
        """
        return int(self.recover_global_indices(0, np.array([slot]))[0])

    def recover_global_index(self, group_index: int, slot: int) -> int:
        return int(self.recover_global_indices(group_index, np.array([slot]))[0])

    def recover_global_indices(self, group_index: int, slots: npt.ArrayLike) -> npt.NDArray[np.int64]:
        """Vectorised :meth:`recover_global_index` over compressed slots."""
        s = np.asarray(slots, dtype=np.int64)
        if s.size and (s.min() < 0 or s.max() >= self.slot_count):
            bad = s[(s < 0) | (s >= self.slot_count)][0]
            raise BoundsError(f"slot {bad} outside [0, {self.slot_count})")
        q, r = np.divmod(s, self.width)
        return group_index * self.group_span + self.capacity * r + q

    def slot_of(self, index: int) -> int:
        """Inverse of :meth:`recover_index` on [0, group_span)."""
        if not 0 <= index < self.group_span:
            raise BoundsError(f"index {index} outside [0, {self.group_span})")
        r, q = divmod(index, self.capacity)
        return self.width * q + r

    # -- slot vectors -------------------------------------------------------

    def check_feature(self, values: RealSequence) -> SlotVector:
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (self.width,):
            raise ShapeError(f"expected a {self.width}-element feature vector, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("feature vector has non-finite entries")
        return v

    def tile(self, values: RealSequence) -> SlotVector:
        """Repeat a width-vector across every block."""
        return np.tile(self.check_feature(values), self.capacity)

    def place(self, blocks: Mapping[int, RealSequence]) -> SlotVector:
        """Slot vector with each given vector at its block, zeros elsewhere."""
        out = np.zeros(self.slot_count, dtype=np.float64)
        for local, values in blocks.items():
            if not 0 <= local < self.capacity:
                raise BoundsError(f"local index {local} outside [0, {self.capacity})")
            out[self.width * local : self.width * (local + 1)] = self.check_feature(values)
        return out

    def head_mask(self, occupancy: BoolMask) -> SlotVector:
        """1.0 at the head slot of each occupied block."""
        occ = self.check_occupancy(occupancy)
        mask = np.zeros((self.capacity, self.width), dtype=np.float64)
        mask[:, 0] = occ
        return mask.reshape(-1)

    def group_validity(self, occupancies: Mapping[int, BoolMask]) -> BoolMask:
        """Valid compressed slots given each offset's shard occupancy."""
        valid = np.zeros((self.capacity, self.width), dtype=bool)
        for offset, occ in occupancies.items():
            if not 0 <= offset < self.width:
                raise BoundsError(f"compression offset {offset} outside [0, {self.width})")
            valid[:, offset] = self.check_occupancy(occ)
        return valid.reshape(-1)

    def check_occupancy(self, occupancy: BoolMask) -> BoolMask:
        occ = np.asarray(occupancy, dtype=bool)
        if occ.shape != (self.capacity,):
            raise ShapeError(f"occupancy must have {self.capacity} entries, got shape {occ.shape}")
        return occ
