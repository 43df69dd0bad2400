"""Wire protocol, service endpoints and their configuration.

# this_file: src/hematch/transport/__init__.py
"""

from __future__ import annotations

from .client import RemoteWorker, ServiceClient
from .config import ServiceConfig, config_from_mapping, load_config
from .services import MainService, WorkerService, run_service, start_service
from .wire import Envelope, MessageType, decode_envelope, encode_envelope

__all__ = [
    "Envelope",
    "MainService",
    "MessageType",
    "RemoteWorker",
    "ServiceClient",
    "ServiceConfig",
    "WorkerService",
    "config_from_mapping",
    "decode_envelope",
    "encode_envelope",
    "load_config",
    "run_service",
    "start_service",
]
