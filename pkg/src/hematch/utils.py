"""File and text helpers: feature files, hex bitsets, addresses.

# this_file: src/hematch/utils.py
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FormatError, ShapeError
from .types import Address, BoolMask, SlotVector

logger = logging.getLogger(__name__)


def bits_to_hex(bits: BoolMask) -> str:
    """Encode a bool vector as hex; entry i is bit i of the number.

    Examples:
        >>> bits_to_hex(np.array([True, False, False, False, True]))
        '11'
    """
    bits = np.asarray(bits, dtype=bool)
    packed = np.packbits(bits, bitorder="little").tobytes()
    value = int.from_bytes(packed, "little")
    return format(value, f"0{max(1, -(-bits.size // 4))}x")


def hex_to_bits(text: str, length: int) -> BoolMask:
    """Inverse of :func:`bits_to_hex` for a vector of ``length`` entries.

    Raises:
        FormatError: If text is not hex or sets bits beyond length
    """
    try:
        value = int(text.strip() or "0", 16)
    except ValueError as e:
        raise FormatError(f"invalid hex bitset {text[:32]!r}") from e
    if value < 0 or value.bit_length() > length:
        raise FormatError(f"bitset sets entries beyond length {length}")
    raw = np.frombuffer(value.to_bytes(-(-length // 8) or 1, "little"), dtype=np.uint8)
    return np.unpackbits(raw, bitorder="little")[:length].astype(bool)


def parse_address(text: str) -> Address:
    """Split ``host:port``.

    Examples:
        >>> parse_address("127.0.0.1:7400")
        ('127.0.0.1', 7400)
    """
    host, sep, port = str(text).strip().rpartition(":")
    if not sep or not host:
        raise ConfigError(f"address {text!r} is not host:port")
    try:
        number = int(port)
    except ValueError as e:
        raise ConfigError(f"address {text!r} has a non-numeric port") from e
    if not 0 <= number < 65536:
        raise ConfigError(f"port {number} out of range")
    return host, number


def format_address(address: Address) -> str:
    return f"{address[0]}:{address[1]}"


def parse_int_list(value: int | str | Iterable[int | str]) -> list[int]:
    """Accept ``3``, ``"1,2,3"`` or ``(1, 2, 3)`` (Fire hands any of these)."""
    if isinstance(value, int):
        return [value]
    if isinstance(value, str):
        items: Iterable[int | str] = [p for p in value.replace(" ", "").split(",") if p]
    else:
        items = value
    try:
        return [int(v) for v in items]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of integers, got {value!r}") from e


def read_feature_file(path: Path) -> list[SlotVector]:
    """Read one comma-separated vector per line; '#' lines are comments.

    Raises:
        FormatError: If the file is missing or a line is not numeric
        ShapeError: If lines have different lengths
    """
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except FileNotFoundError as e:
        raise FormatError(f"feature file {path} not found") from e
    vectors: list[SlotVector] = []
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            vectors.append(np.array([float(x) for x in line.split(",")], dtype=np.float64))
        except ValueError as e:
            raise FormatError(f"{path}:{number}: not a comma-separated list of reals") from e
    if len({v.size for v in vectors}) > 1:
        raise ShapeError(f"feature file {path} mixes vector lengths")
    logger.debug(f"Read {len(vectors)} feature vectors from {path}")
    return vectors


def read_feature_header(path: Path) -> dict[str, str]:
    """Collect ``# key: value`` header lines of a feature file."""
    header: dict[str, str] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.startswith("#"):
            break
        key, sep, value = line[1:].partition(":")
        if sep:
            header[key.strip()] = value.strip()
    return header


def write_feature_file(
    path: Path, vectors: Sequence[SlotVector], header: dict[str, str] | None = None
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    lines.extend(",".join(repr(float(x)) for x in v) for v in vectors)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
