"""Encryption parameter sets and modulus-chain generation.

# this_file: src/hematch/he/params.py
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Literal

from sympy import isprime

from ..constants import (
    DEFAULT_MODULUS_CHAIN,
    DEFAULT_SCALE_BITS,
    DIGEST_SIZE,
    PRODUCTION_POLY_DEGREE,
    TEST_POLY_DEGREE,
)
from ..exceptions import ParameterError

logger = logging.getLogger(__name__)

Backend = Literal["lattice", "clear"]
Profile = Literal["production", "test"]


@lru_cache(maxsize=32)
def generate_primes(poly_degree: int, bit_sizes: tuple[int, ...]) -> tuple[int, ...]:
    """Return distinct NTT-friendly primes, one per requested bit size.

    Every prime satisfies q = 1 (mod 2·poly_degree) so that a primitive
    2·poly_degree-th root of unity exists. Candidates are searched downward
    from 2^bits, so primes of equal size come out in decreasing order.

    Args:
        poly_degree: Ring dimension d (power of two)
        bit_sizes: Requested prime sizes in bits, in chain order

    Returns:
        Tuple of primes in the same order as bit_sizes

    Raises:
        ParameterError: If not enough primes of some size exist
    """
    step = 2 * poly_degree
    used: set[int] = set()
    primes: list[int] = []
    for bits in bit_sizes:
        candidate = ((1 << bits) - 1) // step * step + 1
        while candidate > (1 << (bits - 1)):
            if candidate not in used and isprime(candidate):
                break
            candidate -= step
        else:
            raise ParameterError(
                f"No {bits}-bit prime congruent to 1 mod {step} left for the chain"
            )
        used.add(candidate)
        primes.append(candidate)
    logger.debug(f"Generated modulus chain for d={poly_degree}: {[p.bit_length() for p in primes]}")
    return tuple(primes)


@dataclass(frozen=True)
class HeParams:
    """Leveled slot-encryption parameters.

    The chain lists prime bit sizes: the first prime is the base (decryption)
    prime, the middle primes are consumed one per rescale, and the last prime
    is the special prime used only inside key switching.
    """

    poly_degree: int
    modulus_chain: tuple[int, ...] = DEFAULT_MODULUS_CHAIN
    scale_bits: int = DEFAULT_SCALE_BITS
    backend: Backend = "lattice"
    profile: Profile = "production"
    primes: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        d = self.poly_degree
        if d < 32 or d & (d - 1):
            raise ParameterError(f"poly_degree must be a power of two >= 32, got {d}")
        chain = tuple(int(b) for b in self.modulus_chain)
        object.__setattr__(self, "modulus_chain", chain)
        if len(chain) < 3:
            raise ParameterError("modulus_chain needs a base prime, at least one rescaling prime and a special prime")
        if any(not 20 <= b <= 60 for b in chain):
            raise ParameterError(f"prime sizes must lie in [20, 60] bits, got {list(chain)}")
        if chain[-1] < max(chain[:-1]):
            raise ParameterError("the special prime must be at least as large as every data prime")
        if not 10 <= self.scale_bits < chain[0]:
            raise ParameterError(f"scale_bits must be below the base prime size, got {self.scale_bits}")
        if self.backend not in ("lattice", "clear"):
            raise ParameterError(f"unknown backend {self.backend!r}")
        if self.profile not in ("production", "test"):
            raise ParameterError(f"unknown profile {self.profile!r}")
        object.__setattr__(self, "primes", generate_primes(d, chain))

    @classmethod
    def production(cls, backend: Backend = "lattice") -> HeParams:
        """d = 16,384 with the 240-bit chain and 2^40 scale."""
        return cls(PRODUCTION_POLY_DEGREE, backend=backend, profile="production")

    @classmethod
    def test_profile(cls, backend: Backend = "lattice") -> HeParams:
        """d = 4,096 with the production chain shape, fast enough for CI."""
        return cls(TEST_POLY_DEGREE, backend=backend, profile="test")

    @classmethod
    def for_profile(cls, profile: str, backend: str = "lattice") -> HeParams:
        if profile == "production":
            return cls.production(backend)  # type: ignore[arg-type]
        if profile == "test":
            return cls.test_profile(backend)  # type: ignore[arg-type]
        raise ParameterError(f"unknown profile {profile!r}")

    @classmethod
    def with_depth(
        cls,
        poly_degree: int,
        depth: int,
        backend: Backend = "lattice",
        profile: Profile = "test",
    ) -> HeParams:
        """Chain [60] + [40]*depth + [60], supporting exactly depth rescales."""
        if depth < 1:
            raise ParameterError(f"depth must be >= 1, got {depth}")
        chain = (60, *([40] * depth), 60)
        return cls(poly_degree, chain, backend=backend, profile=profile)

    @property
    def slot_count(self) -> int:
        return self.poly_degree // 2

    @property
    def max_level(self) -> int:
        """Number of rescales a fresh ciphertext supports."""
        return len(self.modulus_chain) - 2

    @property
    def data_primes(self) -> tuple[int, ...]:
        return self.primes[:-1]

    @property
    def special_prime(self) -> int:
        return self.primes[-1]

    @property
    def default_scale(self) -> float:
        return float(2**self.scale_bits)

    @property
    def total_bits(self) -> int:
        return sum(self.modulus_chain)

    @cached_property
    def digest(self) -> bytes:
        """Identifier binding keys and ciphertexts to this parameter set."""
        payload = json.dumps(
            {
                "backend": self.backend,
                "poly_degree": self.poly_degree,
                "primes": [str(p) for p in self.primes],
                "scale_bits": self.scale_bits,
            },
            sort_keys=True,
        ).encode()
        return hashlib.blake2b(payload, digest_size=DIGEST_SIZE).digest()

    def require_seed_allowed(self, seed: int | None) -> None:
        if seed is not None and self.profile != "test":
            raise ParameterError("fixed seeds are only permitted in the test profile")
