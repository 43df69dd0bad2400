"""Custom exceptions for the hematch package.

# this_file: src/hematch/exceptions.py
"""

from __future__ import annotations


class HematchError(Exception):
    """Base exception for all hematch-related errors."""


class ParameterError(HematchError):
    """Raised when encryption parameters are invalid or misused."""


class ShapeError(HematchError):
    """Raised when a vector or matrix has the wrong dimensions."""


class KeyMaterialError(HematchError):
    """Raised when keys are missing or belong to different parameters."""


class AlignmentError(HematchError):
    """Raised when operands disagree on level, scale or parameters."""


class DepthError(HematchError):
    """Raised when a ciphertext has no multiplicative level left."""


class DecodeError(HematchError):
    """Raised when an encoded value cannot be decoded."""


class FormatError(HematchError):
    """Raised when a file or payload has a bad magic, version or digest."""


class ConflictError(HematchError):
    """Raised when a registry block is already occupied."""


class IdentityNotFoundError(HematchError):
    """Raised when a global index has no registered identity."""


class BoundsError(HematchError):
    """Raised when a slot index lies outside the slot range."""


class ConfigError(HematchError):
    """Raised when a service or cluster configuration is invalid."""


class WorkerFaultError(HematchError):
    """Raised when a cluster worker times out, is unreachable or fails.

    The error names the shard range the worker owns. Authentication is
    retryable once the worker is back.
    """

    def __init__(self, message: str, worker: str = "", shards: range | None = None):
        super().__init__(message)
        self.worker = worker
        self.shards = shards


class IncompleteAggregationError(HematchError):
    """Raised when a partial result is missing for an output group."""


class ProtocolError(HematchError):
    """Raised for malformed envelopes or rejected requests.

    Carries an HTTP-like status code so services can report 4xx/5xx classes.
    """

    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


class SyntheticSpecError(HematchError):
    """Raised when a synthetic fixture violates its margin requirement."""
