"""Vectorized modular arithmetic on uint64 RNS limbs.

Limbs are numpy ``uint64`` arrays whose leading axis indexes the prime.
Moduli are passed as ``uint64`` arrays broadcastable against the operands
(usually shape ``(L, 1)``). All primes are below 2^61, so sums of two
residues never overflow and 64x64-bit products are split into 32-bit halves.

# this_file: src/hematch/he/modarith.py
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

U64 = npt.NDArray[np.uint64]

_SHIFT = np.uint64(32)
_LOW = np.uint64(0xFFFFFFFF)
_ZERO = np.uint64(0)
_ONE = np.uint64(1)


def mulhi(a: U64, b: U64) -> U64:
    """High 64 bits of the 128-bit product a*b."""
    a0 = a & _LOW
    a1 = a >> _SHIFT
    b0 = b & _LOW
    b1 = b >> _SHIFT
    p00 = a0 * b0
    p01 = a0 * b1
    p10 = a1 * b0
    p11 = a1 * b1
    mid = (p00 >> _SHIFT) + (p01 & _LOW) + (p10 & _LOW)
    return p11 + (p01 >> _SHIFT) + (p10 >> _SHIFT) + (mid >> _SHIFT)


def addmod(a: U64, b: U64, q: U64) -> U64:
    s = a + b
    return np.where(s >= q, s - q, s)


def submod(a: U64, b: U64, q: U64) -> U64:
    d = a + (q - b)
    return np.where(d >= q, d - q, d)


def negmod(a: U64, q: U64) -> U64:
    return np.where(a == _ZERO, a, q - a)


def shoup_precompute(w: int, q: int) -> int:
    """floor(w * 2^64 / q) for a constant multiplicand w < q."""
    return (w << 64) // q


def mulmod_shoup(a: U64, w: U64, w_shoup: U64, q: U64) -> U64:
    """a*w mod q for a constant w with its precomputed Shoup companion."""
    qhat = mulhi(a, w_shoup)
    r = a * w - qhat * q
    return np.where(r >= q, r - q, r)


@dataclass(frozen=True)
class MontgomeryConstants:
    """Per-prime constants for Montgomery reduction with R = 2^64."""

    q: U64
    q_neg_inv: U64
    r2: U64

    @classmethod
    def build(cls, primes: Sequence[int]) -> MontgomeryConstants:
        mod = 1 << 64
        q_neg_inv = [(mod - pow(p, -1, mod)) % mod for p in primes]
        r2 = [(1 << 128) % p for p in primes]
        return cls(
            q=column(primes),
            q_neg_inv=column(q_neg_inv),
            r2=column(r2),
        )

    def select(self, idx: Sequence[int] | npt.NDArray[np.intp]) -> MontgomeryConstants:
        return MontgomeryConstants(self.q[idx], self.q_neg_inv[idx], self.r2[idx])


def _redc(hi: U64, lo: U64, mc: MontgomeryConstants) -> U64:
    m = lo * mc.q_neg_inv
    t = hi + mulhi(m, mc.q) + (lo != _ZERO).astype(np.uint64)
    return np.where(t >= mc.q, t - mc.q, t)


def mulmod(a: U64, b: U64, mc: MontgomeryConstants) -> U64:
    """Elementwise a*b mod q for arbitrary residues a, b < q."""
    x = _redc(mulhi(a, b), a * b, mc)
    return _redc(mulhi(x, mc.r2), x * mc.r2, mc)


def column(values: Sequence[int]) -> U64:
    """Shape (L, 1) uint64 column, broadcastable over limb arrays."""
    return np.array([int(v) for v in values], dtype=np.uint64).reshape(-1, 1)


def reduce_signed(values: npt.NDArray[np.int64], primes: U64) -> U64:
    """Map signed int64 coefficients (shape (n,)) to residues (shape (L, n))."""
    return (values[np.newaxis, :] % primes.astype(np.int64)).astype(np.uint64)


def to_centered_ints(limbs: U64, primes: Sequence[int]) -> npt.NDArray[np.object_]:
    """CRT-reconstruct limbs into centered Python integers (object array)."""
    modulus = 1
    for p in primes:
        modulus *= p
    acc = np.zeros(limbs.shape[1], dtype=object)
    for row, p in zip(limbs, primes, strict=True):
        q_hat = modulus // p
        factor = pow(q_hat, -1, p)
        term = (row.astype(object) * factor) % p
        acc = acc + term * q_hat
    acc = acc % modulus
    half = modulus // 2
    return np.where((acc > half).astype(bool), acc - modulus, acc)
