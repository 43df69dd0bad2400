"""RNS CKKS-style backend.

Ring elements are stored in evaluation (NTT) form as ``(limbs, n)`` uint64
arrays. A ciphertext at level l uses data primes 0..l; key switching extends
to the special prime P, accumulates one digit per data prime and divides the
result by P.

# this_file: src/hematch/he/lattice.py
"""

from __future__ import annotations

import logging

import numpy as np
import numpy.typing as npt

from ..constants import ERROR_STDDEV
from ..exceptions import DecodeError
from ..types import RnsPoly, SlotVector
from .backend import Ciphertext, HeBackend, Plaintext
from .encoder import SlotEncoder
from .keys import GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey, SwitchingKey
from .modarith import (
    MontgomeryConstants,
    addmod,
    column,
    mulmod,
    mulmod_shoup,
    reduce_signed,
    shoup_precompute,
    submod,
    to_centered_ints,
)
from .ntt import NttTables
from .params import HeParams

logger = logging.getLogger(__name__)

_ZERO = np.uint64(0)


class LatticeBackend(HeBackend):
    """Leveled approximate arithmetic over Z_Q[X]/(X^n + 1)."""

    def __init__(self, params: HeParams):
        super().__init__(params)
        self.n = params.poly_degree
        self.primes = params.primes
        self.special_index = len(self.primes) - 1
        self.encoder = SlotEncoder(self.n)
        self.ntt = NttTables(self.n, self.primes)
        self.mont = MontgomeryConstants.build(self.primes)
        self._division_consts: dict[tuple[int, tuple[int, ...]], tuple[RnsPoly, RnsPoly, RnsPoly]] = {}
        logger.debug(f"Lattice backend ready: d={self.n}, levels={params.max_level}")

    # -- index helpers ----------------------------------------------------

    @staticmethod
    def _data_idx(level: int) -> list[int]:
        return list(range(level + 1))

    def _ks_idx(self, level: int) -> list[int]:
        return [*range(level + 1), self.special_index]

    @property
    def _all_idx(self) -> list[int]:
        return list(range(len(self.primes)))

    def _q(self, idx: list[int]) -> RnsPoly:
        return self.ntt.q[idx]

    # -- sampling ---------------------------------------------------------

    def _ternary(self, rng: np.random.Generator) -> npt.NDArray[np.int64]:
        return rng.integers(-1, 2, size=self.n, dtype=np.int64)

    def _error(self, rng: np.random.Generator) -> npt.NDArray[np.int64]:
        e = np.rint(rng.normal(0.0, ERROR_STDDEV, size=self.n))
        return np.clip(e, -6 * ERROR_STDDEV, 6 * ERROR_STDDEV).astype(np.int64)

    def _uniform(self, rng: np.random.Generator, idx: list[int]) -> RnsPoly:
        return np.stack(
            [rng.integers(0, self.primes[i], size=self.n, dtype=np.uint64) for i in idx]
        )

    def _small_to_ntt(self, values: npt.NDArray[np.int64], idx: list[int]) -> RnsPoly:
        return self.ntt.forward(reduce_signed(values, self._q(idx)), idx)

    # -- key generation ---------------------------------------------------

    def galois_element(self, step: int) -> int:
        return pow(5, step % self.slot_count, 2 * self.n)

    def keygen(self, seed: int | None = None, signed_rotations: bool = False) -> KeyBundle:
        self.params.require_seed_allowed(seed)
        rng = np.random.default_rng(seed)
        digest = self.params.digest
        all_idx = self._all_idx
        s = self._small_to_ntt(self._ternary(rng), all_idx)

        data_idx = self._data_idx(self.params.max_level)
        a = self._uniform(rng, data_idx)
        e = self._small_to_ntt(self._error(rng), data_idx)
        q = self._q(data_idx)
        b = submod(e, mulmod(a, s[data_idx], self.mont.select(data_idx)), q)
        public = PublicKey(digest, b, a)

        s_squared = mulmod(s, s, self.mont)
        relin = RelinKey(digest, self._switching_key(s_squared, s, rng))

        galois = {}
        for step in self.galois_steps(signed_rotations):
            perm = self.ntt.galois_permutation(self.galois_element(step))
            galois[step] = self._switching_key(s[:, perm], s, rng)
        logger.debug(f"Generated {len(galois)} Galois keys")
        return KeyBundle(SecretKey(digest, s), public, relin, GaloisKeys(digest, galois))

    def _switching_key(self, s_from: RnsPoly, s: RnsPoly, rng: np.random.Generator) -> SwitchingKey:
        """Encryptions of P * s_from under s, one per data-prime digit."""
        all_idx = self._all_idx
        q = self._q(all_idx)
        special = self.primes[-1]
        digits = self.params.max_level + 1
        data = np.empty((digits, 2, len(all_idx), self.n), dtype=np.uint64)
        for j in range(digits):
            a = self._uniform(rng, all_idx)
            e = self._small_to_ntt(self._error(rng), all_idx)
            b = submod(e, mulmod(a, s, self.mont), q)
            qj = self.primes[j]
            factor = special % qj
            gadget = mulmod_shoup(
                s_from[j],
                np.uint64(factor),
                np.uint64(shoup_precompute(factor, qj)),
                np.uint64(qj),
            )
            b[j] = addmod(b[j], gadget, np.uint64(qj))
            data[j, 0] = b
            data[j, 1] = a
        return SwitchingKey(data)

    # -- encoding ---------------------------------------------------------

    def _encode(self, values: npt.ArrayLike, level: int, scale: float) -> Plaintext:
        idx = self._data_idx(level)
        coeffs = self.encoder.encode(values, scale)
        limbs = self.ntt.forward(reduce_signed(coeffs, self._q(idx)), idx)
        return Plaintext(limbs, level, scale, self.params.digest)

    def _decode(self, p: Plaintext) -> SlotVector:
        idx = self._data_idx(p.level)
        if p.data.shape != (len(idx), self.n):
            raise DecodeError(f"plaintext limbs have shape {p.data.shape}, expected {(len(idx), self.n)}")
        coeff_limbs = self.ntt.inverse(p.data, idx)
        centered = to_centered_ints(coeff_limbs, [self.primes[i] for i in idx])
        return self.encoder.decode(centered.astype(np.float64), p.scale)

    # -- encryption -------------------------------------------------------

    def _encrypt(self, p: Plaintext, pk: PublicKey) -> Ciphertext:
        rng = np.random.default_rng()
        idx = self._data_idx(p.level)
        q = self._q(idx)
        mc = self.mont.select(idx)
        v = self._small_to_ntt(self._ternary(rng), idx)
        e0 = self._small_to_ntt(self._error(rng), idx)
        e1 = self._small_to_ntt(self._error(rng), idx)
        c0 = addmod(addmod(mulmod(pk.b[idx], v, mc), e0, q), p.data, q)
        c1 = addmod(mulmod(pk.a[idx], v, mc), e1, q)
        return Ciphertext((c0, c1), p.level, p.scale, self.params.digest)

    def _decrypt(self, c: Ciphertext, sk: SecretKey) -> SlotVector:
        idx = self._data_idx(c.level)
        q = self._q(idx)
        mc = self.mont.select(idx)
        s = sk.data[idx]
        acc = c.data[0]
        power = s
        for component in c.data[1:]:
            acc = addmod(acc, mulmod(component, power, mc), q)
            power = mulmod(power, s, mc)
        return self._decode(Plaintext(acc, c.level, c.scale, c.digest))

    # -- arithmetic -------------------------------------------------------

    def _add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        q = self._q(self._data_idx(a.level))
        data = tuple(addmod(x, y, q) for x, y in zip(a.data, b.data, strict=True))
        return Ciphertext(data, a.level, a.scale, a.digest)

    def _sub(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        q = self._q(self._data_idx(a.level))
        data = tuple(submod(x, y, q) for x, y in zip(a.data, b.data, strict=True))
        return Ciphertext(data, a.level, a.scale, a.digest)

    def _add_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        q = self._q(self._data_idx(a.level))
        return Ciphertext((addmod(a.data[0], p.data, q), *a.data[1:]), a.level, a.scale, a.digest)

    def _mul_plain(self, a: Ciphertext, p: Plaintext) -> Ciphertext:
        mc = self.mont.select(self._data_idx(a.level))
        data = tuple(mulmod(x, p.data, mc) for x in a.data)
        return self._rescale(data, a.level, a.scale * p.scale)

    def _mul(self, a: Ciphertext, b: Ciphertext, relin: RelinKey) -> Ciphertext:
        idx = self._data_idx(a.level)
        q = self._q(idx)
        mc = self.mont.select(idx)
        (a0, a1), (b0, b1) = a.data, b.data
        d0 = mulmod(a0, b0, mc)
        d1 = addmod(mulmod(a0, b1, mc), mulmod(a1, b0, mc), q)
        d2 = mulmod(a1, b1, mc)
        k0, k1 = self._key_switch(d2, relin.key, a.level)
        return self._rescale((addmod(d0, k0, q), addmod(d1, k1, q)), a.level, a.scale * b.scale)

    def _rotate_step(self, a: Ciphertext, step: int, galois: GaloisKeys) -> Ciphertext:
        perm = self.ntt.galois_permutation(self.galois_element(step))
        c0 = a.data[0][:, perm]
        c1 = a.data[1][:, perm]
        k0, k1 = self._key_switch(c1, galois.get(step), a.level)
        q = self._q(self._data_idx(a.level))
        return Ciphertext((addmod(c0, k0, q), k1), a.level, a.scale, a.digest)

    # -- rescale and key switching ------------------------------------------

    def _division_constants(self, divisor_index: int, lower: tuple[int, ...]) -> tuple[RnsPoly, RnsPoly, RnsPoly]:
        """(divisor mod q_i, divisor^-1 mod q_i, Shoup companion) for each lower limb."""
        key = (divisor_index, lower)
        if key not in self._division_consts:
            divisor = self.primes[divisor_index]
            primes = [self.primes[i] for i in lower]
            inv = [pow(divisor, -1, p) for p in primes]
            self._division_consts[key] = (
                column([divisor % p for p in primes]),
                column(inv),
                column([shoup_precompute(v, p) for v, p in zip(inv, primes, strict=True)]),
            )
        return self._division_consts[key]

    def _drop_last_limb(self, limbs: RnsPoly, idx: list[int], divisor_index: int) -> RnsPoly:
        """Divide-and-round by the prime at ``divisor_index`` (the last limb of ``limbs``)."""
        divisor = self.primes[divisor_index]
        lower = idx[:-1]
        q = self._q(lower)
        last = self.ntt.inverse(limbs[-1:], [divisor_index])
        residues = last % q
        divisor_mod, inv_col, inv_shoup = self._division_constants(divisor_index, tuple(lower))
        # centered lift: values above divisor/2 stand for value - divisor
        correction = np.where(last > np.uint64(divisor // 2), divisor_mod, _ZERO)
        residues = submod(residues, correction, q)
        diff = submod(limbs[:-1], self.ntt.forward(residues, lower), q)
        return mulmod_shoup(diff, inv_col, inv_shoup, q)

    def _rescale(self, data: tuple[RnsPoly, ...], level: int, scale: float) -> Ciphertext:
        idx = self._data_idx(level)
        out = tuple(self._drop_last_limb(x, idx, level) for x in data)
        return Ciphertext(out, level - 1, self.rescaled_scale(scale, level), self.params.digest)

    def _key_switch(self, d: RnsPoly, key: SwitchingKey, level: int) -> tuple[RnsPoly, RnsPoly]:
        """Return (k0, k1) with k0 + k1*s ~ d*s_from over data primes 0..level."""
        idx = self._data_idx(level)
        ks_idx = self._ks_idx(level)
        q_ks = self._q(ks_idx)
        mc = self.mont.select(ks_idx)
        d_coeff = self.ntt.inverse(d, idx)
        acc0 = np.zeros((len(ks_idx), self.n), dtype=np.uint64)
        acc1 = np.zeros_like(acc0)
        for j in idx:
            digit = self.ntt.forward(d_coeff[j : j + 1] % q_ks, ks_idx)
            acc0 = addmod(acc0, mulmod(digit, key.data[j, 0][ks_idx], mc), q_ks)
            acc1 = addmod(acc1, mulmod(digit, key.data[j, 1][ks_idx], mc), q_ks)
        return (
            self._drop_last_limb(acc0, ks_idx, self.special_index),
            self._drop_last_limb(acc1, ks_idx, self.special_index),
        )
