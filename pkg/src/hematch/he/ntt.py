"""Negacyclic number-theoretic transform over RNS limbs.

Forward transform: Cooley-Tukey butterflies on standard-order input with
bit-reversed powers of a primitive 2n-th root psi; output index i holds the
evaluation at psi^(2*brv(i)+1). Inverse: Gentleman-Sande butterflies with
inverse powers, then a multiply by n^-1. Every stage runs over all limbs at
once by reshaping the (L, n) array into (L, groups, 2, half).

# this_file: src/hematch/he/ntt.py
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from functools import lru_cache

import numpy as np
import numpy.typing as npt

from ..exceptions import ParameterError
from .modarith import U64, addmod, column, mulmod_shoup, shoup_precompute, submod

logger = logging.getLogger(__name__)


def bit_reverse_indices(n: int) -> npt.NDArray[np.intp]:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def primitive_root_2n(q: int, n: int) -> int:
    """Smallest-generator primitive 2n-th root of unity modulo prime q."""
    if (q - 1) % (2 * n):
        raise ParameterError(f"{q} is not congruent to 1 mod {2 * n}")
    exponent = (q - 1) // (2 * n)
    for g in range(2, 1 << 16):
        psi = pow(g, exponent, q)
        if pow(psi, n, q) == q - 1:
            return psi
    raise ParameterError(f"no primitive {2 * n}-th root of unity found modulo {q}")


def _power_table(base: int, q: int, order: npt.NDArray[np.intp]) -> tuple[U64, U64]:
    n = len(order)
    powers = [1] * n
    for i in range(1, n):
        powers[i] = powers[i - 1] * base % q
    ordered = [powers[j] for j in order]
    shoup = [shoup_precompute(w, q) for w in ordered]
    return np.array(ordered, dtype=np.uint64), np.array(shoup, dtype=np.uint64)


class NttTables:
    """Twiddle tables for every prime of a modulus chain."""

    def __init__(self, n: int, primes: Sequence[int]):
        self.n = n
        self.primes = tuple(primes)
        self.q = column(primes)
        rev = bit_reverse_indices(n)
        self._rev = rev
        fwd, fwd_s, inv, inv_s, ninv, ninv_s = [], [], [], [], [], []
        for p in primes:
            psi = primitive_root_2n(p, n)
            w, ws = _power_table(psi, p, rev)
            wi, wis = _power_table(pow(psi, -1, p), p, rev)
            fwd.append(w)
            fwd_s.append(ws)
            inv.append(wi)
            inv_s.append(wis)
            n_inv = pow(n, -1, p)
            ninv.append(n_inv)
            ninv_s.append(shoup_precompute(n_inv, p))
        self.psi_rev = np.stack(fwd)
        self.psi_rev_shoup = np.stack(fwd_s)
        self.psi_inv_rev = np.stack(inv)
        self.psi_inv_rev_shoup = np.stack(inv_s)
        self.n_inv = column(ninv)
        self.n_inv_shoup = column(ninv_s)
        logger.debug(f"Built NTT tables for n={n} over {len(self.primes)} primes")

    def forward(self, a: U64, idx: Sequence[int]) -> U64:
        """Coefficient form -> evaluation form for limbs ``idx``."""
        out = np.array(a, dtype=np.uint64, copy=True)
        limbs, n = out.shape
        q = self.q[idx][:, :, np.newaxis]
        w_all = self.psi_rev[idx]
        ws_all = self.psi_rev_shoup[idx]
        m, t = 1, n
        while m < n:
            t //= 2
            view = out.reshape(limbs, m, 2, t)
            w = w_all[:, m : 2 * m, np.newaxis]
            ws = ws_all[:, m : 2 * m, np.newaxis]
            u = view[:, :, 0, :]
            v = mulmod_shoup(view[:, :, 1, :], w, ws, q)
            top = addmod(u, v, q)
            bottom = submod(u, v, q)
            view[:, :, 0, :] = top
            view[:, :, 1, :] = bottom
            m *= 2
        return out

    def inverse(self, a: U64, idx: Sequence[int]) -> U64:
        """Evaluation form -> coefficient form for limbs ``idx``."""
        out = np.array(a, dtype=np.uint64, copy=True)
        limbs, n = out.shape
        q = self.q[idx][:, :, np.newaxis]
        w_all = self.psi_inv_rev[idx]
        ws_all = self.psi_inv_rev_shoup[idx]
        m, t = n, 1
        while m > 1:
            h = m // 2
            view = out.reshape(limbs, h, 2, t)
            w = w_all[:, h : 2 * h, np.newaxis]
            ws = ws_all[:, h : 2 * h, np.newaxis]
            u = view[:, :, 0, :]
            v = view[:, :, 1, :]
            top = addmod(u, v, q)
            bottom = mulmod_shoup(submod(u, v, q), w, ws, q)
            view[:, :, 0, :] = top
            view[:, :, 1, :] = bottom
            t *= 2
            m = h
        return mulmod_shoup(out, self.n_inv[idx], self.n_inv_shoup[idx], self.q[idx])

    def galois_permutation(self, galois_elt: int) -> npt.NDArray[np.intp]:
        """Index map realizing X -> X^galois_elt on evaluation-form limbs."""
        return _galois_permutation(self.n, galois_elt)


@lru_cache(maxsize=256)
def _galois_permutation(n: int, galois_elt: int) -> npt.NDArray[np.intp]:
    rev = bit_reverse_indices(n)
    two_n = 2 * n
    exponents = (2 * rev + 1) * galois_elt % two_n
    return rev[(exponents - 1) // 2]
