"""Key material containers.

The secret key lives only in :class:`KeyBundle`. Servers are handed an
:class:`EvaluationKeys`, which has no field able to hold secret material.

# this_file: src/hematch/he/keys.py
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from ..exceptions import KeyMaterialError


@dataclass(frozen=True)
class SecretKey:
    """Ternary secret in evaluation form over every prime (client only)."""

    digest: bytes
    data: npt.NDArray[np.generic]


@dataclass(frozen=True)
class PublicKey:
    """Encryption key pair (b, a) with b = -a*s + e over the data primes."""

    digest: bytes
    b: npt.NDArray[np.generic]
    a: npt.NDArray[np.generic]


@dataclass(frozen=True)
class SwitchingKey:
    """Key-switching key, shape (digits, 2, primes, n); one digit per data prime."""

    data: npt.NDArray[np.generic]

    @property
    def nbytes(self) -> int:
        return int(self.data.nbytes)


@dataclass(frozen=True)
class RelinKey:
    """Switches s^2 back to s after a ciphertext-ciphertext product."""

    digest: bytes
    key: SwitchingKey


@dataclass(frozen=True)
class GaloisKeys:
    """Rotation keys indexed by signed slot step."""

    digest: bytes
    keys: Mapping[int, SwitchingKey] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "keys", dict(self.keys))

    @property
    def steps(self) -> tuple[int, ...]:
        return tuple(sorted(self.keys))

    def get(self, step: int) -> SwitchingKey:
        try:
            return self.keys[step]
        except KeyError as e:
            raise KeyMaterialError(f"no Galois key for rotation step {step}") from e

    @property
    def nbytes(self) -> int:
        return sum(k.nbytes for k in self.keys.values())


@dataclass(frozen=True)
class EvaluationKeys:
    """Everything a server may hold: encryption and evaluation keys."""

    public_key: PublicKey
    relin_key: RelinKey | None
    galois_keys: GaloisKeys


@dataclass(frozen=True)
class KeyBundle:
    """The four keys produced by key generation."""

    secret_key: SecretKey
    public_key: PublicKey
    relin_key: RelinKey
    galois_keys: GaloisKeys

    def evaluation_keys(self) -> EvaluationKeys:
        """Server-side view of the bundle, without the secret key."""
        return EvaluationKeys(self.public_key, self.relin_key, self.galois_keys)
