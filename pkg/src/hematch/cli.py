"""Command-line interface for hematch.

# this_file: src/hematch/cli.py
"""

from __future__ import annotations

import asyncio
import logging
import sys
from collections.abc import Callable
from pathlib import Path
from typing import TypeVar

from rich.console import Console
from rich.logging import RichHandler

from .bench import render_report, run_bench
from .client import ClientPipeline, FeatureVector, ModelParams, finalize_features, load_model
from .exceptions import ConfigError, HematchError, ShapeError
from .he.backend import create_backend
from .he.serialize import load_public_key, load_secret_key, save_key_bundle
from .transport.client import ServiceClient
from .transport.config import ServiceConfig, load_config
from .transport.services import run_service
from .utils import parse_int_list, read_feature_file

logger = logging.getLogger(__name__)

T = TypeVar("T")


def configure_logging(verbose: bool = False) -> None:
    """Configure logging with Rich formatting.

    Args:
        verbose: Enable debug-level logging if True
    """
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        handlers=[RichHandler(rich_tracebacks=True, console=Console(stderr=True))],
        force=True,
    )


def _category(error: HematchError) -> str:
    """'WorkerFaultError' -> 'worker fault'."""
    name = type(error).__name__.removesuffix("Error")
    words = "".join(f" {c.lower()}" if c.isupper() else c for c in name).strip()
    return words or "error"


def _run(command: Callable[[], T], verbose: bool) -> T:
    """Run a command, turning failures into a logged message and exit status 1."""
    try:
        return command()
    except HematchError as e:
        logger.error(f"{_category(e)}: {e}")
        sys.exit(1)
    except KeyboardInterrupt:
        logger.info("Interrupted")
        sys.exit(130)
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        if verbose:
            logger.exception("Full traceback:")
        sys.exit(1)


def _client_config(config: str) -> ServiceConfig:
    cfg = load_config(Path(config).expanduser())
    if cfg.role != "client-tool":
        raise ConfigError(f"{config} has role {cfg.role!r}; client commands need a client-tool config")
    return cfg


def _model(cfg: ServiceConfig, threshold: float | None) -> ModelParams:
    return load_model(cfg.require_path("model_path"), threshold)


def _feature(path: str, line: int, model: ModelParams) -> FeatureVector:
    vectors = read_feature_file(Path(path).expanduser())
    if not 0 <= line < len(vectors):
        raise ShapeError(f"{path} holds {len(vectors)} vectors, no vector {line}")
    return finalize_features(vectors[line], model.fc16)


def keygen(config: str, seed: int | None = None, signed: bool = True, verbose: bool = False) -> None:
    """Generate the four key files named by a client-tool config.

    Args:
        config: Path to a client-tool JSON config
        seed: Deterministic seed (test profile only)
        signed: Also generate Galois keys for negative power-of-two steps, so
            registrations rotate right in fewer key switches. Pass
            --signed=False for the minimal set of positive power-of-two steps.
        verbose: Enable verbose logging
    """
    configure_logging(verbose)

    def command() -> None:
        cfg = _client_config(config)
        backend = create_backend(cfg.params)
        bundle = backend.keygen(seed, signed_rotations=signed)
        save_key_bundle(
            bundle,
            cfg.require_path("public_key"),
            cfg.require_path("galois_key"),
            cfg.require_path("relin_key"),
            cfg.require_path("secret_key"),
        )
        Console().print(
            f"wrote keys for {cfg.params.profile} profile "
            f"({len(bundle.galois_keys.steps)} Galois steps)"
        )

    _run(command, verbose)


def enroll(config: str, features: str, id: str, line: int = 0, verbose: bool = False) -> None:
    """Encrypt a feature vector and register it under ``id``.

    Args:
        config: Path to a client-tool JSON config
        features: Feature file (one comma-separated vector per line)
        id: User identifier to store with the registration
        line: Which vector of the file to use
        verbose: Enable verbose logging
    """
    configure_logging(verbose)

    def command() -> None:
        cfg = _client_config(config)
        model = _model(cfg, None)
        backend = create_backend(cfg.params)
        public_key = load_public_key(cfg.require_path("public_key"), cfg.params)
        pipeline = ClientPipeline(backend, public_key, width=model.width)
        c_u = pipeline.pack_registration(_feature(features, line, model))
        client = ServiceClient(cfg.server_address, cfg.params, cfg.deadline)
        index = asyncio.run(client.enroll(c_u, str(id)))
        Console().print(f"enrolled {id} at index {index}")

    _run(command, verbose)


def auth(
    config: str,
    features: str,
    threshold: float | None = None,
    line: int = 0,
    verbose: bool = False,
) -> None:
    """Authenticate a feature vector and print the decision.

    Args:
        config: Path to a client-tool JSON config
        features: Feature file (one comma-separated vector per line)
        threshold: Override the model file's decision threshold
        line: Which vector of the file to use
        verbose: Enable verbose logging
    """
    configure_logging(verbose)

    def command() -> None:
        cfg = _client_config(config)
        model = _model(cfg, threshold)
        backend = create_backend(cfg.params)
        pipeline = ClientPipeline(
            backend,
            load_public_key(cfg.require_path("public_key"), cfg.params),
            load_secret_key(cfg.require_path("secret_key"), cfg.params),
            model.width,
        )
        c_u = pipeline.pack_query(_feature(features, line, model))
        client = ServiceClient(cfg.server_address, cfg.params, cfg.deadline)

        async def exchange() -> str:
            results = await client.auth(c_u)
            decision = pipeline.decide_many(
                [(r.group_index, r.ciphertext, r.valid_slots) for r in results], model.decision
            )
            logger.debug(f"Best candidate {decision.best_index} with p={decision.probability}")
            if decision.global_index is None:
                return "no_match"
            user_id = await client.identity(decision.global_index)
            return f"match {user_id} (index {decision.global_index})"

        outcome = asyncio.run(exchange())
        Console().print(outcome)

    _run(command, verbose)


def serve(config: str, verbose: bool = False) -> None:
    """Run a main or worker service until interrupted.

    Args:
        config: Path to a main or worker JSON config
        verbose: Enable verbose logging
    """
    configure_logging(verbose)

    def command() -> None:
        cfg = load_config(Path(config).expanduser())
        asyncio.run(run_service(cfg))

    _run(command, verbose)


def bench(
    workers: int | str | tuple[int, ...] = "1,2,3",
    n: int = 5_000,
    dim: int | str | tuple[int, ...] = 16,
    trials: int = 5,
    profile: str = "production",
    backend: str = "lattice",
    seed: int = 0,
    verbose: bool = False,
) -> None:
    """Time authentication over worker counts and compare result sizes.

    Args:
        workers: Worker counts, e.g. ``1,2,3``
        n: Synthetic population size
        dim: Feature widths, e.g. ``16,64``
        trials: Queries per worker count
        profile: ``production`` or ``test``
        backend: ``lattice`` or ``clear``
        seed: Population seed
        verbose: Enable verbose logging
    """
    configure_logging(verbose)

    def command() -> None:
        report = run_bench(
            parse_int_list(workers),
            n,
            parse_int_list(dim),
            trials,
            profile,
            backend,
            seed,
        )
        render_report(report)

    _run(command, verbose)


COMMANDS = {
    "keygen": keygen,
    "enroll": enroll,
    "auth": auth,
    "serve": serve,
    "bench": bench,
}
