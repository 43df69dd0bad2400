"""Leveled slot-homomorphic encryption core.

# this_file: src/hematch/he/__init__.py
"""

from __future__ import annotations

from .backend import Ciphertext, HeBackend, Plaintext, create_backend, decompose_rotation
from .keys import EvaluationKeys, GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey
from .params import HeParams
from .serialize import (
    deserialize_ciphertext,
    load_galois_keys,
    load_public_key,
    load_relin_key,
    load_secret_key,
    save_key_bundle,
    serialize_ciphertext,
)

__all__ = [
    "Ciphertext",
    "EvaluationKeys",
    "GaloisKeys",
    "HeBackend",
    "HeParams",
    "KeyBundle",
    "Plaintext",
    "PublicKey",
    "RelinKey",
    "SecretKey",
    "create_backend",
    "decompose_rotation",
    "deserialize_ciphertext",
    "load_galois_keys",
    "load_public_key",
    "load_relin_key",
    "load_secret_key",
    "save_key_bundle",
    "serialize_ciphertext",
]
