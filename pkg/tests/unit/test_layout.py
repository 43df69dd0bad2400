"""Unit tests for the slot layout and index arithmetic.

# this_file: tests/unit/test_layout.py
"""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hematch.exceptions import BoundsError, ParameterError, ShapeError
from hematch.layout import SlotLayout

PRODUCTION = SlotLayout(8192)


class TestSlotLayout:
    """Tests for capacity, allocation and index recovery."""

    def test_production_geometry(self, production_layout):
        """512 users per shard, 8192 per compressed group."""
        assert production_layout.capacity == 512
        assert production_layout.group_span == 8192
        assert production_layout.block_sum_steps == [8, 4, 2, 1]

    @pytest.mark.parametrize(
        ("n_registered", "expected"),
        [(0, (0, 0)), (511, (0, 511)), (512, (1, 0)), (513, (1, 1)), (5000, (9, 392))],
    )
    def test_allocate(self, production_layout, n_registered, expected):
        """Sequential allocation fills shards in order."""
        assert production_layout.allocate(n_registered) == expected

    def test_allocate_negative(self, production_layout):
        """A negative count is out of bounds."""
        with pytest.raises(BoundsError):
            production_layout.allocate(-1)

    @pytest.mark.parametrize(
        ("slot", "expected"), [(0, 0), (1, 512), (16, 1), (17, 513), (8191, 8191)]
    )
    def test_recover_index(self, production_layout, slot, expected):
        """Slot 16q + r holds index 512r + q."""
        assert production_layout.recover_index(slot) == expected

    @pytest.mark.parametrize("slot", [-1, 8192])
    def test_recover_index_bounds(self, production_layout, slot):
        """Slots outside the vector are rejected."""
        with pytest.raises(BoundsError):
            production_layout.recover_index(slot)

    @given(st.integers(min_value=0, max_value=PRODUCTION.slot_count - 1))
    def test_slot_of_inverts_recover_index(self, slot):
        """slot_of and recover_index are mutually inverse."""
        assert PRODUCTION.slot_of(PRODUCTION.recover_index(slot)) == slot

    def test_recover_index_is_bijection(self, layout):
        """Every index of a group appears exactly once."""
        indices = sorted(layout.recover_index(s) for s in range(layout.slot_count))
        assert indices == list(range(layout.group_span))

    def test_global_index_and_groups(self, production_layout):
        """Shard 17 sits in group 1 at offset 1; group indices add the span."""
        assert production_layout.group_of(17) == (1, 1)
        assert production_layout.global_index(2, 3) == 1027
        assert production_layout.recover_global_index(1, 17) == 8192 + 513

    def test_vectorised_recovery(self, layout):
        """Slot 16q + r of group g holds index g·span + 128r + q, as an array."""
        slots = np.arange(layout.slot_count)
        expected = (2 * layout.group_span + layout.capacity * (slots % 16) + slots // 16).tolist()
        assert layout.recover_global_indices(2, slots).tolist() == expected
        assert layout.recover_global_indices(0, np.zeros(0, dtype=np.int64)).size == 0
        with pytest.raises(BoundsError):
            layout.recover_global_indices(0, [0, layout.slot_count])

    def test_shard_and_group_counts(self, production_layout):
        """5000 users need 10 shards and one output group."""
        assert production_layout.shard_count(5000) == 10
        assert production_layout.shard_count(0) == 0
        assert production_layout.group_count(10) == 1
        assert production_layout.group_count(17) == 2

    @pytest.mark.parametrize(("slots", "width"), [(8192, 12), (8192, 0), (8, 16), (100, 16)])
    def test_invalid_geometry(self, slots, width):
        """Widths must be powers of two dividing the slot count."""
        with pytest.raises(ParameterError):
            SlotLayout(slots, width)

    def test_wider_features(self):
        """Width 64 keeps the formulas with a smaller capacity."""
        wide = SlotLayout(8192, 64)
        assert wide.capacity == 128
        assert wide.recover_index(65) == 128 + 1
        assert wide.block_sum_steps == [32, 16, 8, 4, 2, 1]


class TestSlotVectors:
    """Tests for tiling, placement and masks."""

    def test_tile(self, layout):
        """The query repeats in every block."""
        u = np.arange(16.0)
        tiled = layout.tile(u)
        assert tiled.shape == (layout.slot_count,)
        np.testing.assert_array_equal(tiled[16:32], u)

    def test_place(self, layout):
        """Vectors land in their blocks, zeros elsewhere."""
        u = np.ones(16)
        slots = layout.place({2: u})
        assert slots[32:48].tolist() == [1.0] * 16
        assert slots.sum() == 16.0

    def test_place_bounds(self, layout):
        """Blocks beyond capacity are rejected."""
        with pytest.raises(BoundsError):
            layout.place({layout.capacity: np.ones(16)})

    def test_check_feature(self, layout):
        """Feature vectors must have width entries and be finite."""
        with pytest.raises(ShapeError):
            layout.check_feature(np.ones(15))
        with pytest.raises(ShapeError):
            layout.check_feature(np.full(16, np.inf))

    def test_head_mask(self, layout):
        """Only heads of occupied blocks are set."""
        occupancy = np.zeros(layout.capacity, dtype=bool)
        occupancy[[0, 3]] = True
        mask = layout.head_mask(occupancy)
        assert np.flatnonzero(mask).tolist() == [0, 48]

    def test_group_validity(self, layout):
        """Offset r and local q make slot 16q + r valid."""
        occ = np.zeros(layout.capacity, dtype=bool)
        occ[[0, 2]] = True
        valid = layout.group_validity({1: occ})
        assert np.flatnonzero(valid).tolist() == [1, 33]

    def test_group_validity_bad_offset(self, layout):
        """Offsets must lie below the width."""
        with pytest.raises(BoundsError):
            layout.group_validity({16: np.zeros(layout.capacity, dtype=bool)})

    def test_check_occupancy(self, layout):
        """Occupancy vectors have capacity entries."""
        with pytest.raises(ShapeError):
            layout.check_occupancy(np.zeros(3, dtype=bool))
