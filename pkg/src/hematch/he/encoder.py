"""Canonical-embedding encoder between real slot vectors and ring elements.

Slot j corresponds to the evaluation point zeta^(5^j mod 2n), zeta a
primitive 2n-th complex root of unity, so the automorphism X -> X^(5^k)
rotates slots left by k. Both directions are a single length-n FFT.

# this_file: src/hematch/he/encoder.py
"""

from __future__ import annotations

import numpy as np
import numpy.typing as npt

from ..exceptions import DecodeError, ParameterError, ShapeError
from ..types import SlotVector

# Largest coefficient magnitude accepted before int64 conversion
_MAX_COEFF = float(2**62)


class SlotEncoder:
    """Maps length-n/2 real vectors to integer coefficient vectors and back."""

    def __init__(self, poly_degree: int):
        n = poly_degree
        self.n = n
        self.slot_count = n // 2
        two_n = 2 * n
        rotation_group = np.empty(self.slot_count, dtype=np.int64)
        g = 1
        for j in range(self.slot_count):
            rotation_group[j] = g
            g = g * 5 % two_n
        # positions of the slot roots and of their conjugates among the odd powers
        self._pos = (rotation_group - 1) // 2
        self._conj = (two_n - rotation_group - 1) // 2
        i = np.arange(n)
        self._twist = np.exp(1j * np.pi * i / n)
        self._untwist = np.conj(self._twist)

    def encode(self, values: npt.ArrayLike, scale: float) -> npt.NDArray[np.int64]:
        """Return rounded integer coefficients of the polynomial carrying values*scale."""
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (self.slot_count,):
            raise ShapeError(f"expected {self.slot_count} slot values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("slot values must be finite")
        full = np.zeros(self.n, dtype=np.complex128)
        full[self._pos] = v
        full[self._conj] = v
        coeffs = np.real(np.fft.fft(full) / self.n * self._untwist) * scale
        if np.max(np.abs(coeffs), initial=0.0) >= _MAX_COEFF:
            raise ParameterError("encoded coefficients overflow; lower the scale or the values")
        return np.rint(coeffs).astype(np.int64)

    def decode(self, coeffs: npt.ArrayLike, scale: float) -> SlotVector:
        """Evaluate real coefficients at the slot roots and remove the scale."""
        c = np.asarray(coeffs, dtype=np.float64)
        if c.shape != (self.n,):
            raise DecodeError(f"expected {self.n} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise DecodeError("coefficients are not finite")
        evaluations = np.fft.ifft(c * self._twist) * self.n
        return np.real(evaluations[self._pos]) / scale
