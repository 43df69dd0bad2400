"""Exact clear-slot reference backend.

Ciphertexts hold the slot vector itself. Levels and scales follow the
lattice backend step for step (same primes, same rescale divisor), so depth
and alignment failures reproduce identically. Galois keys carry no material
but their step set still decides which rotations are possible.

# this_file: src/hematch/he/clear.py
"""

from __future__ import annotations

import secrets

import numpy as np
import numpy.typing as npt

from ..exceptions import DecodeError, ShapeError
from ..types import SlotVector
from .backend import Ciphertext, HeBackend, Plaintext
from .keys import GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey, SwitchingKey

_EMPTY = np.zeros(0, dtype=np.uint64)


class ClearBackend(HeBackend):
    """Slotwise float64 arithmetic with mock level/scale bookkeeping."""

    def keygen(self, seed: int | None = None, signed_rotations: bool = False) -> KeyBundle:
        self.params.require_seed_allowed(seed)
        digest = self.params.digest
        if seed is None:
            token = np.frombuffer(secrets.token_bytes(32), dtype=np.uint8).copy()
        else:
            token = np.random.default_rng(seed).integers(0, 256, size=32, dtype=np.uint8)
        galois = {step: SwitchingKey(_EMPTY) for step in self.galois_steps(signed_rotations)}
        return KeyBundle(
            SecretKey(digest, token),
            PublicKey(digest, _EMPTY, _EMPTY),
            RelinKey(digest, SwitchingKey(_EMPTY)),
            GaloisKeys(digest, galois),
        )

    def _encode(self, values: npt.ArrayLike, level: int, scale: float) -> Plaintext:
        v = np.array(values, dtype=np.float64)
        if v.shape != (self.slot_count,):
            raise ShapeError(f"expected {self.slot_count} slot values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("slot values must be finite")
        return Plaintext(v, level, scale, self.params.digest)

    def _decode(self, p: Plaintext) -> SlotVector:
        if p.data.shape != (self.slot_count,) or p.data.dtype != np.float64:
            raise DecodeError(f"clear plaintext has shape {p.data.shape} and dtype {p.data.dtype}")
        return np.array(p.data, dtype=np.float64)

    def _encrypt(self, p: Plaintext, pk: PublicKey) -> Ciphertext:
        return Ciphertext((np.array(p.data),), p.level, p.scale, self.params.digest)

    def _decrypt(self, c: Ciphertext, sk: SecretKey) -> SlotVector:
        return self._decode(Plaintext(c.data[0], c.level, c.scale, c.digest))

    def _add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return Ciphertext((a.data[0] + b.data[0],), a.level, a.scale, a.digest)

    def _sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return Ciphertext((a.data[0] - b.data[0],), a.level, a.scale, a.digest)

    def _add_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        return Ciphertext((a.data[0] + p.data,), a.level, a.scale, a.digest)

    def _mul_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        scale = self.rescaled_scale(a.scale * p.scale, a.level)
        return Ciphertext((a.data[0] * p.data,), a.level - 1, scale, a.digest)

    def _mul(self, a: Ciphertext, b: Ciphertext, relin: RelinKey) -> Ciphertext:
        scale = self.rescaled_scale(a.scale * b.scale, a.level)
        return Ciphertext((a.data[0] * b.data[0],), a.level - 1, scale, a.digest)

    def _rotate_step(self, a: Ciphertext, step: int, galois: GaloisKeys) -> Ciphertext:
        galois.get(step)
        return Ciphertext((np.roll(a.data[0], -step),), a.level, a.scale, a.digest)
