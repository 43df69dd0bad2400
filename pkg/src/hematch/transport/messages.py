"""Request and response bodies for each message type.

# this_file: src/hematch/transport/messages.py
"""

from __future__ import annotations

from collections.abc import Sequence

from ..engine import CompressedResult
from ..exceptions import FormatError, ProtocolError
from ..he.backend import Ciphertext
from ..he.params import HeParams
from ..he.serialize import deserialize_ciphertext, serialize_ciphertext
from ..utils import bits_to_hex, hex_to_bits
from .wire import Envelope, MessageType

OK = "200"


def ok(message_type: MessageType, headers: dict[str, str] | None = None, payload: bytes = b"") -> Envelope:
    return Envelope(message_type, {"status": OK, **(headers or {})}, payload)


def parse_ciphertext(env: Envelope, params: HeParams) -> Ciphertext:
    """Ciphertext payload of a request; digest mismatches become 400s."""
    if not env.payload:
        raise ProtocolError("request carries no ciphertext")
    try:
        return deserialize_ciphertext(env.payload, params)
    except FormatError as e:
        raise ProtocolError(f"rejected ciphertext: {e}") from e


def results_envelope(
    message_type: MessageType, results: Sequence[CompressedResult], params: HeParams
) -> Envelope:
    """Compressed results with per-group index, occupancy bitset and size headers."""
    headers = {"results": str(len(results))}
    blobs = []
    for i, result in enumerate(results):
        blob = serialize_ciphertext(result.ciphertext, params)
        blobs.append(blob)
        headers[f"group-{i}"] = str(result.group_index)
        headers[f"occupancy-{i}"] = bits_to_hex(result.valid_slots)
        headers[f"size-{i}"] = str(len(blob))
    return ok(message_type, headers, b"".join(blobs))


def parse_results(env: Envelope, params: HeParams) -> list[CompressedResult]:
    count = env.int_header("results")
    sizes = [env.int_header(f"size-{i}") for i in range(count)]
    if any(s < 0 for s in sizes) or sum(sizes) != len(env.payload):
        raise ProtocolError("result sizes do not add up to the payload")
    out = []
    offset = 0
    for i, size in enumerate(sizes):
        ct = deserialize_ciphertext(env.payload[offset : offset + size], params)
        offset += size
        valid = hex_to_bits(env.header(f"occupancy-{i}"), params.slot_count)
        out.append(CompressedResult(env.int_header(f"group-{i}"), ct, valid))
    return out
