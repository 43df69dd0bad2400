"""Connections to the main server and to workers.

# this_file: src/hematch/transport/client.py
"""

from __future__ import annotations

import asyncio
import logging

from ..constants import DEFAULT_DEADLINE_S
from ..engine import CompressedResult
from ..exceptions import ProtocolError
from ..he.backend import Ciphertext
from ..he.params import HeParams
from ..he.serialize import serialize_ciphertext
from ..types import Address
from ..utils import format_address
from .messages import parse_results
from .wire import Envelope, MessageType, raise_for_status, read_envelope, write_envelope

logger = logging.getLogger(__name__)


async def request(address: Address, env: Envelope, timeout: float | None = None) -> Envelope:
    """One request/response exchange on a fresh connection.

    Raises:
        OSError: If the peer is unreachable
        TimeoutError: If timeout elapses
        HematchError: Mapped from an error response
    """

    async def exchange() -> Envelope:
        reader, writer = await asyncio.open_connection(*address)
        try:
            await write_envelope(writer, env)
            try:
                response = await read_envelope(reader)
            except asyncio.IncompleteReadError as e:
                raise ProtocolError(f"{format_address(address)} closed the connection") from e
        finally:
            writer.close()
            await writer.wait_closed()
        if response.type != env.type:
            raise ProtocolError(f"response type {response.type.name} to a {env.type.name} request")
        return response

    response = await (exchange() if timeout is None else asyncio.wait_for(exchange(), timeout))
    return raise_for_status(response)


class ServiceClient:
    """Client-tool side of the public message types."""

    def __init__(self, address: Address, params: HeParams, timeout: float | None = None):
        self.address = address
        self.params = params
        self.timeout = timeout

    async def _send(self, env: Envelope) -> Envelope:
        return await request(self.address, env, self.timeout)

    async def enroll(self, c_u: Ciphertext, user_id: str) -> int:
        env = Envelope(
            MessageType.ENROLL, {"user-id": user_id}, serialize_ciphertext(c_u, self.params)
        )
        return (await self._send(env)).int_header("index")

    async def auth(self, c_u: Ciphertext) -> list[CompressedResult]:
        env = Envelope(MessageType.AUTH, {}, serialize_ciphertext(c_u, self.params))
        return parse_results(await self._send(env), self.params)

    async def identity(self, global_index: int) -> str:
        env = Envelope(MessageType.IDENTITY, {"index": str(global_index)})
        return (await self._send(env)).header("user-id")

    async def health(self) -> dict[str, str]:
        response = await self._send(Envelope(MessageType.HEALTH))
        return {k: v for k, v in response.headers.items() if k != "status"}


class RemoteWorker:
    """Worker reached over TCP; satisfies the orchestrator's worker protocol."""

    def __init__(
        self,
        address: Address,
        params: HeParams,
        token: str | None = None,
        timeout: float = DEFAULT_DEADLINE_S,
    ):
        self.address = address
        self.name = format_address(address)
        self.params = params
        self.token = token
        self.timeout = timeout

    def _headers(self, **extra: str) -> dict[str, str]:
        headers = dict(extra)
        if self.token:
            headers["token"] = self.token
        return headers

    async def score(self, c_u: Ciphertext) -> list[CompressedResult]:
        env = Envelope(MessageType.WORKER_SCORE, self._headers(), serialize_ciphertext(c_u, self.params))
        return parse_results(await request(self.address, env, self.timeout), self.params)

    async def register(
        self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str | None = None
    ) -> None:
        headers = self._headers(shard=str(shard_index), local=str(local_index))
        if attempt is not None:
            headers["attempt"] = attempt
        env = Envelope(MessageType.WORKER_REGISTER, headers, serialize_ciphertext(c_u, self.params))
        await request(self.address, env, self.timeout)

    async def revoke(self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str) -> bool:
        env = Envelope(
            MessageType.WORKER_REVOKE,
            self._headers(shard=str(shard_index), local=str(local_index), attempt=attempt),
            serialize_ciphertext(c_u, self.params),
        )
        return (await request(self.address, env, self.timeout)).header("cleared") == "1"

    async def health(self) -> dict[str, str]:
        response = await request(self.address, Envelope(MessageType.HEALTH), self.timeout)
        return {k: v for k, v in response.headers.items() if k != "status"}
