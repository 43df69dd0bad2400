"""Binary containers for ciphertexts and key files.

Every container starts with an 8-byte magic, a little-endian u16 format
version and the 16-byte params digest. Arrays are stored raw, little-endian.

# this_file: src/hematch/he/serialize.py
"""

from __future__ import annotations

import logging
import struct
from pathlib import Path

import numpy as np
import numpy.typing as npt

from ..constants import (
    CIPHERTEXT_MAGIC,
    DIGEST_SIZE,
    FORMAT_VERSION,
    GALOIS_KEY_MAGIC,
    PUBLIC_KEY_MAGIC,
    RELIN_KEY_MAGIC,
    SECRET_KEY_MAGIC,
)
from ..exceptions import FormatError
from .backend import Ciphertext
from .keys import GaloisKeys, KeyBundle, PublicKey, RelinKey, SecretKey, SwitchingKey
from .params import HeParams

logger = logging.getLogger(__name__)

_PREAMBLE = struct.Struct(f"<8sH{DIGEST_SIZE}s")
_CT_HEADER = struct.Struct("<BHdHHI")
_KINDS = {"lattice": 0, "clear": 1}
_DTYPES = {b"u": np.dtype("<u8"), b"f": np.dtype("<f8"), b"b": np.dtype("u1")}
_CODES = {(dt.kind, dt.itemsize): code for code, dt in _DTYPES.items()}


class _Reader:
    def __init__(self, blob: bytes, what: str):
        self.blob = memoryview(blob)
        self.pos = 0
        self.what = what

    def take(self, size: int) -> memoryview:
        if self.pos + size > len(self.blob):
            raise FormatError(f"{self.what} is truncated")
        chunk = self.blob[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: struct.Struct) -> tuple:
        return fmt.unpack(self.take(fmt.size))

    def array(self) -> npt.NDArray[np.generic]:
        (code, ndim) = struct.unpack("<cB", self.take(2))
        if code not in _DTYPES:
            raise FormatError(f"{self.what} has unknown array type {code!r}")
        shape = struct.unpack(f"<{ndim}I", self.take(4 * ndim))
        dtype = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    def finish(self) -> None:
        if self.pos != len(self.blob):
            raise FormatError(f"{self.what} has {len(self.blob) - self.pos} trailing bytes")


def _pack_array(arr: npt.NDArray[np.generic]) -> bytes:
    code = _CODES.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise FormatError(f"cannot serialize arrays of dtype {arr.dtype}")
    header = struct.pack(f"<cB{arr.ndim}I", code, arr.ndim, *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _check_preamble(reader: _Reader, magic: bytes, params: HeParams) -> None:
    found, version, digest = reader.unpack(_PREAMBLE)
    if found != magic:
        raise FormatError(f"{reader.what}: bad magic {bytes(found)!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{reader.what}: unsupported format version {version}")
    if digest != params.digest:
        raise FormatError(f"{reader.what}: params digest mismatch")


# -- ciphertexts ------------------------------------------------------------


def serialize_ciphertext(ct: Ciphertext, params: HeParams) -> bytes:
    """Magic, version, digest, level, scale, component count, then limbs."""
    limbs, width = ct.data[0].shape if ct.data[0].ndim == 2 else (1, ct.data[0].shape[0])
    parts = [
        _PREAMBLE.pack(CIPHERTEXT_MAGIC, FORMAT_VERSION, ct.digest),
        _CT_HEADER.pack(_KINDS[params.backend], ct.level, ct.scale, ct.size, limbs, width),
    ]
    dtype = "<u8" if params.backend == "lattice" else "<f8"
    parts.extend(np.ascontiguousarray(c, dtype=dtype).tobytes() for c in ct.data)
    return b"".join(parts)


def deserialize_ciphertext(blob: bytes, params: HeParams) -> Ciphertext:
    reader = _Reader(blob, "ciphertext")
    _check_preamble(reader, CIPHERTEXT_MAGIC, params)
    kind, level, scale, components, limbs, width = reader.unpack(_CT_HEADER)
    if kind != _KINDS[params.backend]:
        raise FormatError("ciphertext was produced by a different backend")
    if not 0 <= level <= params.max_level or components not in (2, 3, 1):
        raise FormatError(f"ciphertext header out of range (level={level}, components={components})")
    if params.backend == "lattice":
        if limbs != level + 1 or width != params.poly_degree:
            raise FormatError("ciphertext limb layout does not match its level")
        dtype, shape = np.dtype("<u8"), (limbs, width)
    else:
        if limbs != 1 or width != params.slot_count:
            raise FormatError("ciphertext slot count does not match params")
        dtype, shape = np.dtype("<f8"), (width,)
    size = limbs * width * dtype.itemsize
    data = tuple(
        np.frombuffer(reader.take(size), dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
        for _ in range(components)
    )
    reader.finish()
    return Ciphertext(data, level, scale, params.digest)


# -- key files ----------------------------------------------------------------


def _write(path: Path, magic: bytes, digest: bytes, body: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_PREAMBLE.pack(magic, FORMAT_VERSION, digest) + body)
    logger.debug(f"Wrote {path} ({path.stat().st_size} bytes)")


def _read(path: Path, magic: bytes, params: HeParams, what: str) -> _Reader:
    try:
        blob = path.read_bytes()
    except FileNotFoundError as e:
        raise FormatError(f"{what} file {path} not found") from e
    reader = _Reader(blob, f"{what} file {path}")
    _check_preamble(reader, magic, params)
    return reader


def save_public_key(pk: PublicKey, path: Path) -> None:
    _write(path, PUBLIC_KEY_MAGIC, pk.digest, _pack_array(pk.b) + _pack_array(pk.a))


def load_public_key(path: Path, params: HeParams) -> PublicKey:
    reader = _read(path, PUBLIC_KEY_MAGIC, params, "public key")
    b, a = reader.array(), reader.array()
    reader.finish()
    return PublicKey(params.digest, b, a)


def save_secret_key(sk: SecretKey, path: Path) -> None:
    _write(path, SECRET_KEY_MAGIC, sk.digest, _pack_array(sk.data))
    path.chmod(0o600)


def load_secret_key(path: Path, params: HeParams) -> SecretKey:
    reader = _read(path, SECRET_KEY_MAGIC, params, "secret key")
    data = reader.array()
    reader.finish()
    return SecretKey(params.digest, data)


def save_relin_key(rk: RelinKey, path: Path) -> None:
    _write(path, RELIN_KEY_MAGIC, rk.digest, _pack_array(rk.key.data))


def load_relin_key(path: Path, params: HeParams) -> RelinKey:
    reader = _read(path, RELIN_KEY_MAGIC, params, "relinearization key")
    data = reader.array()
    reader.finish()
    return RelinKey(params.digest, SwitchingKey(data))


def save_galois_keys(gk: GaloisKeys, path: Path) -> None:
    body = [struct.pack("<I", len(gk.keys))]
    for step in gk.steps:
        body.append(struct.pack("<i", step))
        body.append(_pack_array(gk.keys[step].data))
    _write(path, GALOIS_KEY_MAGIC, gk.digest, b"".join(body))


def load_galois_keys(path: Path, params: HeParams) -> GaloisKeys:
    reader = _read(path, GALOIS_KEY_MAGIC, params, "Galois key")
    (count,) = struct.unpack("<I", reader.take(4))
    keys = {}
    for _ in range(count):
        (step,) = struct.unpack("<i", reader.take(4))
        keys[step] = SwitchingKey(reader.array())
    reader.finish()
    return GaloisKeys(params.digest, keys)


def save_key_bundle(bundle: KeyBundle, public: Path, galois: Path, relin: Path, secret: Path) -> None:
    """Write the four key files produced by key generation."""
    save_public_key(bundle.public_key, public)
    save_galois_keys(bundle.galois_keys, galois)
    save_relin_key(bundle.relin_key, relin)
    save_secret_key(bundle.secret_key, secret)
