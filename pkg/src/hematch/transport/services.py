"""Main-server and worker endpoints on asyncio streams.

A main server owns the identity map and the cluster plan; workers own shard
files and do the ciphertext work. A main server configured without workers
hosts its shards in-process.

# this_file: src/hematch/transport/services.py
"""

from __future__ import annotations

import asyncio
import hmac
import logging
from collections.abc import Awaitable, Callable
from dataclasses import dataclass

from ..client import load_model
from ..cluster import ClusterOrchestrator, LocalWorker, WorkerClient, plan
from ..engine import AuthEngine, ServerModelParams
from ..exceptions import ConfigError, HematchError, ProtocolError
from ..he.backend import create_backend
from ..he.keys import EvaluationKeys
from ..he.serialize import load_galois_keys, load_public_key, load_relin_key
from ..layout import SlotLayout
from ..registry import IdentityMap, ShardStore, check_user_id
from ..utils import format_address
from .client import RemoteWorker
from .config import ServiceConfig
from .messages import ok, parse_ciphertext, results_envelope
from .wire import Envelope, MessageType, error_response, read_envelope, write_envelope

logger = logging.getLogger(__name__)

Handler = Callable[[Envelope], Awaitable[Envelope]]


def load_evaluation_keys(config: ServiceConfig) -> EvaluationKeys:
    """Public, relinearization and Galois keys named by a server config."""
    params = config.params
    return EvaluationKeys(
        load_public_key(config.require_path("public_key"), params),
        load_relin_key(config.require_path("relin_key"), params),
        load_galois_keys(config.require_path("galois_key"), params),
    )


def build_shard_host(config: ServiceConfig) -> tuple[ShardStore, AuthEngine]:
    """Shard store and scoring engine for a worker (or a main without workers)."""
    backend = create_backend(config.params)
    layout = SlotLayout(backend.slot_count, config.width)
    keys = load_evaluation_keys(config)
    model_path = config.path("model_path")
    if model_path is None:
        model = ServerModelParams.zeros(layout)
    else:
        loaded = load_model(model_path)
        if loaded.width != layout.width:
            raise ConfigError(f"model width {loaded.width} differs from configured width {layout.width}")
        model = ServerModelParams(layout, loaded.fc16.bias, loaded.fc1_weights)
    store = ShardStore(backend, keys.public_key, keys.galois_keys, layout)
    registry_path = config.path("registry_path")
    if registry_path is not None:
        store.load(registry_path)
    engine = AuthEngine(backend, keys, model, layout.width)
    return store, engine


class WorkerService:
    """Scores and registers into the shards this process holds."""

    def __init__(self, config: ServiceConfig, store: ShardStore, engine: AuthEngine):
        self.config = config
        self.store = store
        self.engine = engine
        self.registry_path = config.path("registry_path")

    @classmethod
    def from_config(cls, config: ServiceConfig) -> WorkerService:
        if config.role != "worker":
            raise ConfigError(f"expected a worker configuration, got role {config.role!r}")
        store, engine = build_shard_host(config)
        return cls(config, store, engine)

    def _check_token(self, env: Envelope) -> None:
        expected = self.config.token
        if expected and not hmac.compare_digest(env.headers.get("token", ""), expected):
            raise ProtocolError("internal request lacks a valid cluster token", 403)

    async def handle(self, env: Envelope) -> Envelope:
        if env.type == MessageType.HEALTH:
            return ok(env.type, {"role": "worker", "shards": str(len(self.store))})
        if not env.type.internal:
            raise ProtocolError(f"{env.type.name} is not served by a worker")
        self._check_token(env)
        c_u = parse_ciphertext(env, self.config.params)
        if env.type == MessageType.WORKER_SCORE:
            results = await asyncio.to_thread(self.engine.full_auth, c_u, self.store.snapshot())
            return results_envelope(env.type, results, self.config.params)
        shard_index, local_index = env.int_header("shard"), env.int_header("local")
        attempt = env.headers.get("attempt")
        if env.type == MessageType.WORKER_REVOKE:
            if not attempt:
                raise ProtocolError("revocation names no attempt")
            cleared = await asyncio.to_thread(self.store.revoke, c_u, shard_index, local_index, attempt)
            if cleared:
                await self._persist(shard_index)
            return ok(env.type, {"cleared": "1" if cleared else "0"})
        await asyncio.to_thread(self.store.register, c_u, shard_index, local_index, attempt)
        await self._persist(shard_index)
        return ok(env.type)

    async def _persist(self, shard_index: int) -> None:
        if self.registry_path is not None:
            await asyncio.to_thread(self.store.persist_shard, self.registry_path, shard_index)


class MainService:
    """Public endpoints: enrollment, authentication, identity lookup."""

    def __init__(
        self,
        config: ServiceConfig,
        orchestrator: ClusterOrchestrator,
        identities: IdentityMap,
    ):
        self.config = config
        self.orchestrator = orchestrator
        self.identities = identities
        self.layout = orchestrator.layout
        self.registry_path = config.path("registry_path")
        self._enroll_lock = asyncio.Lock()

    @classmethod
    def from_config(cls, config: ServiceConfig) -> MainService:
        if config.role != "main":
            raise ConfigError(f"expected a main configuration, got role {config.role!r}")
        backend = create_backend(config.params)
        layout = SlotLayout(backend.slot_count, config.width)
        workers: list[WorkerClient]
        if config.worker_addresses:
            workers = [
                RemoteWorker(address, config.params, config.token, config.deadline)
                for address in config.worker_addresses
            ]
        else:
            store, engine = build_shard_host(config)
            workers = [LocalWorker("local", store, engine, config.path("registry_path"))]
        shard_count = config.shard_count or len(workers)
        cluster = plan(shard_count, len(workers))
        logger.debug(f"Cluster plan: {cluster.sizes} over {shard_count} planned shards")
        registry_path = config.path("registry_path")
        identities = IdentityMap.load(registry_path) if registry_path else IdentityMap()
        orchestrator = ClusterOrchestrator(backend, layout, cluster, workers, config.deadline)
        return cls(config, orchestrator, identities)

    async def handle(self, env: Envelope) -> Envelope:
        if env.type == MessageType.ENROLL:
            return await self.handle_enroll(env)
        if env.type == MessageType.AUTH:
            return await self.handle_auth(env)
        if env.type == MessageType.IDENTITY:
            return await self.handle_identity(env)
        if env.type == MessageType.HEALTH:
            return ok(
                env.type,
                {
                    "role": "main",
                    "registered": str(len(self.identities)),
                    "workers": ",".join(self.orchestrator.names),
                },
            )
        raise ProtocolError(f"{env.type.name} is internal to the cluster")

    async def handle_enroll(self, env: Envelope) -> Envelope:
        user_id = check_user_id(env.header("user-id").strip())
        c_u = parse_ciphertext(env, self.config.params)
        async with self._enroll_lock:
            global_index = self.identities.next_index()
            shard_index, local_index = self.layout.allocate(global_index)
            await self.orchestrator.register(c_u, shard_index, local_index)
            self.identities.add(global_index, user_id)
            if self.registry_path is not None:
                await asyncio.to_thread(self.identities.persist, self.registry_path)
        logger.info(f"Enrolled user at global index {global_index} (shard {shard_index})")
        return ok(env.type, {"index": str(global_index)})

    async def handle_auth(self, env: Envelope) -> Envelope:
        c_u = parse_ciphertext(env, self.config.params)
        results = await self.orchestrator.authenticate(c_u, self.identities.next_index())
        logger.info(f"Authentication answered with {len(results)} compressed result(s)")
        return results_envelope(env.type, results, self.config.params)

    async def handle_identity(self, env: Envelope) -> Envelope:
        return ok(env.type, {"user-id": self.identities.lookup(env.int_header("index"))})


async def serve_connection(
    reader: asyncio.StreamReader, writer: asyncio.StreamWriter, handler: Handler
) -> None:
    """Answer envelopes on one connection until the peer hangs up."""
    peer = writer.get_extra_info("peername")
    try:
        while True:
            try:
                request = await read_envelope(reader)
            except asyncio.IncompleteReadError:
                break
            except ProtocolError as e:
                logger.warning(f"Dropping connection from {peer}: {e}")
                break
            try:
                response = await handler(request)
            except HematchError as e:
                logger.error(f"{request.type.name} from {peer} failed: {e}")
                response = error_response(request.type, e)
            except Exception as e:
                logger.exception(f"Unexpected error handling {request.type.name}")
                response = error_response(request.type, ProtocolError(f"internal error: {e}", 500))
            await write_envelope(writer, response)
    except (ConnectionError, OSError) as e:
        logger.debug(f"Connection from {peer} ended: {e}")
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass


@dataclass
class RunningService:
    server: asyncio.Server
    service: MainService | WorkerService

    @property
    def port(self) -> int:
        return int(self.server.sockets[0].getsockname()[1])

    async def close(self) -> None:
        self.server.close()
        await self.server.wait_closed()


async def start_service(config: ServiceConfig) -> RunningService:
    """Build the service for ``config.role`` and start listening."""
    service: MainService | WorkerService
    if config.role == "main":
        service = MainService.from_config(config)
    elif config.role == "worker":
        service = WorkerService.from_config(config)
    else:
        raise ConfigError(f"role {config.role!r} does not run a service")
    host, port = config.listen_address

    async def on_connect(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        await serve_connection(reader, writer, service.handle)

    server = await asyncio.start_server(on_connect, host, port)
    running = RunningService(server, service)
    logger.info(f"{config.role} service listening on {format_address((host, running.port))}")
    return running


async def run_service(config: ServiceConfig, ready: Callable[[int], None] | None = None) -> None:
    """Serve until cancelled; ``ready`` receives the bound port."""
    running = await start_service(config)
    if ready is not None:
        ready(running.port)
    try:
        async with running.server:
            await running.server.serve_forever()
    finally:
        logger.info(f"{config.role} service stopped")
