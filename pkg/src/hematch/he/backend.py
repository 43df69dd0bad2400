"""Algebraic contract shared by the lattice and clear-slot backends.

Both backends carry identical level and scale bookkeeping, so alignment and
depth errors reproduce the same way on either. Subclasses implement the
``_``-prefixed primitives; the public operations validate operands first.

# this_file: src/hematch/he/backend.py
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from ..constants import SCALE_TOLERANCE
from ..exceptions import AlignmentError, DepthError, KeyMaterialError
from ..types import SlotVector
from .keys import GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey
from .params import HeParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Plaintext:
    """Encoded slot vector bound to a level and scale."""

    data: npt.NDArray[np.generic]
    level: int
    scale: float
    digest: bytes


@dataclass(frozen=True)
class Ciphertext:
    """Leveled ciphertext: two components (three only inside ``mul``)."""

    data: tuple[npt.NDArray[np.generic], ...]
    level: int
    scale: float
    digest: bytes

    @property
    def size(self) -> int:
        return len(self.data)


def scales_match(a: float, b: float) -> bool:
    return abs(a - b) <= SCALE_TOLERANCE * max(abs(a), abs(b))


def naf(value: int) -> list[int]:
    """Signed power-of-two digits (non-adjacent form) summing to value."""
    digits: list[int] = []
    bit = 1
    while value:
        if value & 1:
            d = 2 - (value & 3)
            digits.append(d * bit)
            value -= d
        value >>= 1
        bit <<= 1
    return digits


def decompose_rotation(steps: int, slot_count: int, available: Iterable[int]) -> list[int]:
    """Split a rotation into key-switched power-of-two steps.

    Candidates are the plain binary expansion of ``steps mod slot_count`` and
    the non-adjacent forms of that residue and of its negative complement.
    The shortest candidate whose every step has a key wins.

    Raises:
        KeyMaterialError: If no candidate is covered by the available keys
    """
    residue = steps % slot_count
    if residue == 0:
        return []
    keyed = {s % slot_count: s for s in available}
    binary = [1 << b for b in range(slot_count.bit_length()) if residue >> b & 1]
    candidates = [binary, naf(residue), naf(residue - slot_count)]
    best: list[int] | None = None
    missing: set[int] = set()
    for digits in candidates:
        candidate = [s for s in digits if s % slot_count]
        uncovered = {s for s in candidate if s % slot_count not in keyed}
        if uncovered:
            missing |= uncovered
            continue
        if best is None or len(candidate) < len(best):
            best = candidate
    if best is None:
        raise KeyMaterialError(
            f"rotation by {steps} needs Galois keys for steps {sorted(missing)}"
        )
    return [keyed[s % slot_count] for s in best]


class HeBackend(ABC):
    """Leveled slot-homomorphic encryption engine."""

    def __init__(self, params: HeParams):
        self.params = params

    @property
    def slot_count(self) -> int:
        return self.params.slot_count

    # -- key generation ---------------------------------------------------

    @abstractmethod
    def keygen(self, seed: int | None = None, signed_rotations: bool = False) -> KeyBundle:
        """Generate secret, public, relinearization and Galois keys."""

    def galois_steps(self, signed_rotations: bool = False) -> list[int]:
        """Power-of-two step set 2^0 .. 2^(log2(slots)-1), optionally with negatives."""
        log_slots = self.slot_count.bit_length() - 1
        steps = [1 << t for t in range(log_slots)]
        if signed_rotations:
            # -slots/2 coincides with +slots/2
            steps += [-(1 << t) for t in range(log_slots - 1)]
        return steps

    # -- encoding ---------------------------------------------------------

    def encode(
        self, values: npt.ArrayLike, level: int | None = None, scale: float | None = None
    ) -> Plaintext:
        level = self.params.max_level if level is None else level
        scale = self.params.default_scale if scale is None else scale
        if not 0 <= level <= self.params.max_level:
            raise DepthError(f"level {level} outside [0, {self.params.max_level}]")
        return self._encode(values, level, scale)

    def encode_like(self, values: npt.ArrayLike, ct: Ciphertext) -> Plaintext:
        """Encode at the ciphertext's current level and scale."""
        return self._encode(values, ct.level, ct.scale)

    @abstractmethod
    def _encode(self, values: npt.ArrayLike, level: int, scale: float) -> Plaintext: ...

    def decode(self, p: Plaintext) -> SlotVector:
        self._check_digest(p.digest, "plaintext")
        return self._decode(p)

    @abstractmethod
    def _decode(self, p: Plaintext) -> SlotVector: ...

    # -- encryption -------------------------------------------------------

    def encrypt(self, p: Plaintext, pk: PublicKey) -> Ciphertext:
        if pk.digest != self.params.digest:
            raise KeyMaterialError("public key belongs to different parameters")
        self._check_digest(p.digest, "plaintext")
        return self._encrypt(p, pk)

    @abstractmethod
    def _encrypt(self, p: Plaintext, pk: PublicKey) -> Ciphertext: ...

    def decrypt(self, c: Ciphertext, sk: SecretKey) -> SlotVector:
        if sk.digest != self.params.digest or c.digest != self.params.digest:
            raise KeyMaterialError("ciphertext or secret key belongs to different parameters")
        return self._decrypt(c, sk)

    @abstractmethod
    def _decrypt(self, c: Ciphertext, sk: SecretKey) -> SlotVector: ...

    # -- arithmetic -------------------------------------------------------

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        return self._add(a, b)

    def sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_pair(a, b)
        return self._sub(a, b)

    def add_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        self._check_plain(a, p)
        return self._add_plain(a, p)

    def mul_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        self._check_plain(a, p)
        self._check_depth(a)
        return self._mul_plain(a, p)

    def mul(self, a: Ciphertext, b: Ciphertext, relin: RelinKey | None) -> Ciphertext:
        self._check_pair(a, b)
        self._check_depth(a)
        if relin is None:
            raise KeyMaterialError("ciphertext multiplication needs a relinearization key")
        if relin.digest != self.params.digest:
            raise KeyMaterialError("relinearization key belongs to different parameters")
        return self._mul(a, b, relin)

    def rotate(self, a: Ciphertext, steps: int, galois: GaloisKeys) -> Ciphertext:
        """Cyclic slot rotation; positive steps move slot i+steps to slot i."""
        self._check_digest(a.digest, "ciphertext")
        if galois.digest != self.params.digest:
            raise KeyMaterialError("Galois keys belong to different parameters")
        plan = decompose_rotation(steps, self.slot_count, galois.keys)
        if plan:
            logger.debug(f"rotate {steps}: key steps {plan}")
        out = a
        for step in plan:
            out = self._rotate_step(out, step, galois)
        return out

    @abstractmethod
    def _add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext: ...

    @abstractmethod
    def _sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext: ...

    @abstractmethod
    def _add_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext: ...

    @abstractmethod
    def _mul_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext: ...

    @abstractmethod
    def _mul(self, a: Ciphertext, b: Ciphertext, relin: RelinKey) -> Ciphertext: ...

    @abstractmethod
    def _rotate_step(self, a: Ciphertext, step: int, galois: GaloisKeys) -> Ciphertext: ...

    # -- bookkeeping ------------------------------------------------------

    def rescaled_scale(self, scale: float, level: int) -> float:
        """Scale after dividing by the prime dropped at ``level``."""
        return scale / self.params.primes[level]

    def _check_digest(self, digest: bytes, what: str) -> None:
        if digest != self.params.digest:
            raise AlignmentError(f"{what} was created under different parameters")

    def _check_pair(self, a: Ciphertext, b: Ciphertext) -> None:
        self._check_digest(a.digest, "ciphertext")
        self._check_digest(b.digest, "ciphertext")
        if a.level != b.level:
            raise AlignmentError(f"level mismatch: {a.level} vs {b.level}")
        if not scales_match(a.scale, b.scale):
            raise AlignmentError(f"scale mismatch: {a.scale!r} vs {b.scale!r}")

    def _check_plain(self, a: Ciphertext, p: Plaintext) -> None:
        self._check_digest(a.digest, "ciphertext")
        self._check_digest(p.digest, "plaintext")
        if a.level != p.level:
            raise AlignmentError(f"plaintext encoded at level {p.level}, ciphertext at {a.level}")
        if not scales_match(a.scale, p.scale):
            raise AlignmentError(f"plaintext scale {p.scale!r} differs from ciphertext scale {a.scale!r}")

    @staticmethod
    def _check_depth(a: Ciphertext) -> None:
        if a.level < 1:
            raise DepthError("no multiplicative level left (level 0)")


def create_backend(params: HeParams) -> HeBackend:
    """Instantiate the backend named by ``params.backend``."""
    if params.backend == "clear":
        from .clear import ClearBackend

        return ClearBackend(params)
    from .lattice import LatticeBackend

    return LatticeBackend(params)
