"""Service configuration loaded from JSON.

# this_file: src/hematch/transport/config.py
"""

from __future__ import annotations

import copy
import logging
from collections.abc import Mapping
from functools import cached_property
from pathlib import Path
from typing import Any

from box import Box, BoxError

from ..constants import DEFAULT_DEADLINE_S, FEATURE_WIDTH
from ..exceptions import ConfigError, ParameterError
from ..he.params import HeParams
from ..types import Address
from ..utils import parse_address

logger = logging.getLogger(__name__)

ROLES = ("main", "worker", "client-tool")


class ServiceConfig:
    """Validated service configuration.

    Attribute access falls through to the underlying Box, so ``cfg.role`` and
    ``cfg["role"]`` both work. Relative paths resolve against the directory
    of the config file.
    """

    def __init__(self, data: Box, base_dir: Path | None = None):
        self._data = data
        self._base_dir = base_dir or Path.cwd()
        self._validate()

    @property
    def data(self) -> Box:
        return self._data

    def __getattr__(self, name: str) -> Any:
        if name.startswith("_"):
            raise AttributeError(name)
        return getattr(self._data, name)

    def __getitem__(self, key: str) -> Any:
        return self._data[key]

    def __repr__(self) -> str:
        return f"ServiceConfig(role={self._data.role!r}, listen={self._data.listen!r})"

    def to_dict(self) -> dict[str, Any]:
        return self._data.to_dict()

    def _validate(self) -> None:
        d = self._data
        if d.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}, got {d.role!r}")
        if d.role in ("main", "worker"):
            if d.secret_key:
                raise ConfigError(f"a {d.role} configuration must not reference a secret key")
            if not d.listen:
                raise ConfigError(f"a {d.role} configuration needs a listen address")
            parse_address(d.listen)
        if d.role == "client-tool" and d.server:
            parse_address(d.server)
        if not isinstance(d.workers or [], list):
            raise ConfigError("workers must be a list of host:port strings")
        for worker in d.workers or []:
            parse_address(worker)
        if self.deadline <= 0:
            raise ConfigError(f"deadline_s must be positive, got {self.deadline}")
        if self.shard_count < 0:
            raise ConfigError(f"shard_count must be >= 0, got {self.shard_count}")
        _ = self.params

    def path(self, key: str) -> Path | None:
        """Configured path for ``key``, resolved, or None when unset."""
        value = self._data.get(key)
        if not value:
            return None
        p = Path(str(value)).expanduser()
        return p if p.is_absolute() else (self._base_dir / p).resolve()

    def require_path(self, key: str) -> Path:
        p = self.path(key)
        if p is None:
            raise ConfigError(f"configuration lacks {key!r}")
        return p

    @property
    def role(self) -> str:
        return str(self._data.role)

    @property
    def listen_address(self) -> Address:
        return parse_address(self._data.listen)

    @property
    def server_address(self) -> Address:
        if not self._data.server:
            raise ConfigError("configuration lacks the main server address 'server'")
        return parse_address(self._data.server)

    @property
    def worker_addresses(self) -> list[Address]:
        return [parse_address(w) for w in self._data.workers or []]

    @property
    def deadline(self) -> float:
        value = self._data.deadline_s
        try:
            return float(DEFAULT_DEADLINE_S if value is None else value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"deadline_s is not a number: {value!r}") from e

    @property
    def shard_count(self) -> int:
        value = self._data.shard_count
        try:
            return int(0 if value is None else value)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"shard_count is not an integer: {value!r}") from e

    @property
    def width(self) -> int:
        return int(self._data.width or FEATURE_WIDTH)

    @property
    def token(self) -> str | None:
        return str(self._data.cluster_token) if self._data.cluster_token else None

    @cached_property
    def params(self) -> HeParams:
        try:
            return HeParams.for_profile(
                str(self._data.profile or "production"), str(self._data.backend or "lattice")
            )
        except ParameterError as e:
            raise ConfigError(f"invalid encryption parameters: {e}") from e


def config_from_mapping(data: Mapping[str, Any], base_dir: Path | None = None) -> ServiceConfig:
    box = Box(copy.deepcopy(dict(data)), default_box=True, default_box_attr=None)
    return ServiceConfig(box, base_dir)


def load_config(path: Path) -> ServiceConfig:
    """Read a JSON service configuration.

    Raises:
        ConfigError: If the file is missing, malformed or invalid
    """
    try:
        data = Box.from_json(filename=str(path), default_box=True, default_box_attr=None)
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} not found") from e
    except (BoxError, ValueError) as e:
        raise ConfigError(f"config file {path} is not a JSON object: {e}") from e
    cfg = ServiceConfig(data, path.parent.resolve())
    logger.debug(f"Loaded {cfg.role} configuration from {path}")
    return cfg
