"""Length-prefixed envelope framing.

Layout: 4-byte big-endian length, then a 2-byte big-endian message type,
``key:value`` header lines terminated by an empty line, and the payload.
The length covers everything after itself.

# this_file: src/hematch/transport/wire.py
"""

from __future__ import annotations

import asyncio
import struct
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import IntEnum

from ..constants import MAX_ENVELOPE_SIZE
from ..exceptions import (
    AlignmentError,
    BoundsError,
    ConfigError,
    ConflictError,
    DecodeError,
    DepthError,
    FormatError,
    HematchError,
    IdentityNotFoundError,
    IncompleteAggregationError,
    KeyMaterialError,
    ParameterError,
    ProtocolError,
    ShapeError,
    WorkerFaultError,
)

_LENGTH = struct.Struct(">I")
_TYPE = struct.Struct(">H")


class MessageType(IntEnum):
    ENROLL = 0x01
    AUTH = 0x02
    IDENTITY = 0x03
    HEALTH = 0x04
    WORKER_SCORE = 0x11
    WORKER_REGISTER = 0x12
    WORKER_REVOKE = 0x13

    @property
    def internal(self) -> bool:
        return self >= 0x10


@dataclass(frozen=True)
class Envelope:
    type: MessageType
    headers: Mapping[str, str] = field(default_factory=dict)
    payload: bytes = b""

    @property
    def status(self) -> int:
        value = self.headers.get("status", "200")
        try:
            return int(value)
        except ValueError as e:
            raise ProtocolError(f"malformed status header {value[:16]!r}") from e

    def header(self, key: str) -> str:
        """Required header value.

        Raises:
            ProtocolError: If the header is absent
        """
        try:
            return self.headers[key]
        except KeyError as e:
            raise ProtocolError(f"missing header {key!r}") from e

    def int_header(self, key: str) -> int:
        value = self.header(key)
        try:
            return int(value)
        except ValueError as e:
            raise ProtocolError(f"header {key!r} is not an integer: {value[:32]!r}") from e


def encode_envelope(env: Envelope) -> bytes:
    lines = []
    for key, value in env.headers.items():
        if not key or ":" in key or any(c in key + value for c in "\r\n"):
            raise ProtocolError(f"header {key!r} cannot be framed")
        lines.append(f"{key}:{value}\n")
    lines.append("\n")
    body = _TYPE.pack(int(env.type)) + "".join(lines).encode("utf-8") + env.payload
    if len(body) > MAX_ENVELOPE_SIZE:
        raise ProtocolError(f"envelope of {len(body)} bytes exceeds the frame limit")
    return _LENGTH.pack(len(body)) + body


def decode_body(body: bytes) -> Envelope:
    """Parse everything after the length prefix.

    Raises:
        ProtocolError: For unknown types or malformed headers
    """
    if len(body) < _TYPE.size + 1:
        raise ProtocolError("envelope too short")
    (raw_type,) = _TYPE.unpack_from(body)
    try:
        message_type = MessageType(raw_type)
    except ValueError as e:
        raise ProtocolError(f"unknown message type 0x{raw_type:02x}") from e
    end = body.find(b"\n\n", _TYPE.size)
    if body[_TYPE.size : _TYPE.size + 1] == b"\n":
        header_block, payload = b"", body[_TYPE.size + 1 :]
    elif end < 0:
        raise ProtocolError("header block is not terminated")
    else:
        header_block, payload = body[_TYPE.size : end + 1], body[end + 2 :]
    headers: dict[str, str] = {}
    try:
        text = header_block.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ProtocolError("headers are not UTF-8") from e
    for line in text.split("\n")[:-1]:
        key, sep, value = line.partition(":")
        if not sep or not key:
            raise ProtocolError(f"malformed header line {line[:40]!r}")
        headers[key] = value
    return Envelope(message_type, headers, payload)


def decode_envelope(frame: bytes) -> Envelope:
    if len(frame) < _LENGTH.size:
        raise ProtocolError("frame shorter than its length prefix")
    (length,) = _LENGTH.unpack_from(frame)
    if length != len(frame) - _LENGTH.size:
        raise ProtocolError(f"length prefix says {length} bytes, frame carries {len(frame) - _LENGTH.size}")
    return decode_body(frame[_LENGTH.size :])


async def read_envelope(reader: asyncio.StreamReader) -> Envelope:
    """Read one frame; IncompleteReadError propagates on a closed stream."""
    (length,) = _LENGTH.unpack(await reader.readexactly(_LENGTH.size))
    if length > MAX_ENVELOPE_SIZE:
        raise ProtocolError(f"announced envelope of {length} bytes exceeds the frame limit")
    return decode_body(await reader.readexactly(length))


async def write_envelope(writer: asyncio.StreamWriter, env: Envelope) -> None:
    writer.write(encode_envelope(env))
    await writer.drain()


# Status codes carried in response headers, most specific class first
_STATUS: tuple[tuple[type[HematchError], int], ...] = (
    (ProtocolError, 400),
    (FormatError, 400),
    (ShapeError, 400),
    (DecodeError, 400),
    (AlignmentError, 400),
    (DepthError, 400),
    (KeyMaterialError, 400),
    (ParameterError, 400),
    (BoundsError, 404),
    (IdentityNotFoundError, 404),
    (ConflictError, 409),
    (WorkerFaultError, 503),
    (IncompleteAggregationError, 503),
    (ConfigError, 500),
)


def status_for(error: HematchError) -> int:
    if isinstance(error, ProtocolError):
        return error.status
    for kind, status in _STATUS:
        if isinstance(error, kind):
            return status
    return 500


def error_response(request_type: MessageType, error: HematchError) -> Envelope:
    message = " ".join(str(error).split())
    return Envelope(
        request_type,
        {"status": str(status_for(error)), "error": f"{type(error).__name__}: {message}"},
    )


def raise_for_status(env: Envelope) -> Envelope:
    """Turn an error response back into the matching exception."""
    status = env.status
    if status == 200:
        return env
    error = env.headers.get("error", "unknown error")
    kind = error.partition(":")[0]
    if status == 404:
        raise IdentityNotFoundError(error)
    if status == 409:
        raise ConflictError(error)
    if status == 503 and kind == "IncompleteAggregationError":
        raise IncompleteAggregationError(error)
    if status == 503:
        raise WorkerFaultError(error)
    raise ProtocolError(error, status)
