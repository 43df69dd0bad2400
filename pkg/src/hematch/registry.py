"""Encrypted registry: packed shards, occupancy and the identity map.

Shards are immutable snapshots swapped under a per-shard lock, so scoring
reads never observe a half-applied registration. The identity map is
append-only.

# this_file: src/hematch/registry.py
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Iterator, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import (
    IDENTITIES_FILE,
    IDENTITIES_HEADER,
    OCCUPANCY_FILE,
    OCCUPANCY_HEADER,
    SHARD_FILE_TEMPLATE,
)
from .exceptions import (
    AlignmentError,
    BoundsError,
    ConflictError,
    FormatError,
    IdentityNotFoundError,
    ParameterError,
)
from .he.backend import Ciphertext, HeBackend
from .he.keys import GaloisKeys, PublicKey
from .he.serialize import deserialize_ciphertext, serialize_ciphertext
from .layout import SlotLayout
from .types import BoolMask
from .utils import bits_to_hex, hex_to_bits

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegistryShard:
    """One packed registry ciphertext and the blocks it has filled."""

    shard_index: int
    ciphertext: Ciphertext
    occupancy: BoolMask

    @property
    def registered(self) -> int:
        return int(np.count_nonzero(self.occupancy))


def check_user_id(user_id: str) -> str:
    """Reject ids the identity file cannot store.

    Raises:
        ParameterError: If user_id is empty or spans several lines
    """
    if not user_id or "\n" in user_id or "\r" in user_id:
        raise ParameterError("user id must be a non-empty single line")
    return user_id


class IdentityMap:
    """Plaintext global-index to user-id table, append-only."""

    def __init__(self) -> None:
        self._ids: dict[int, str] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, index: object) -> bool:
        return index in self._ids

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._ids))

    def add(self, global_index: int, user_id: str) -> None:
        check_user_id(user_id)
        with self._lock:
            if global_index in self._ids:
                raise ConflictError(f"global index {global_index} already has an identity")
            self._ids[global_index] = user_id

    def lookup(self, global_index: int) -> str:
        try:
            return self._ids[global_index]
        except KeyError as e:
            raise IdentityNotFoundError(f"no identity registered at index {global_index}") from e

    def next_index(self) -> int:
        """Sequential allocation: the next index after the highest one taken."""
        return max(self._ids, default=-1) + 1

    def persist(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        lines = [IDENTITIES_HEADER, *(f"{i},{self._ids[i]}" for i in self)]
        (directory / IDENTITIES_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, directory: Path) -> IdentityMap:
        path = directory / IDENTITIES_FILE
        out = cls()
        if not path.exists():
            return out
        lines = path.read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != IDENTITIES_HEADER:
            raise FormatError(f"{path}: missing or unsupported header")
        for number, line in enumerate(lines[1:], start=2):
            if not line:
                continue
            index, sep, user_id = line.partition(",")
            if not sep or not index.isdigit():
                raise FormatError(f"{path}:{number}: expected 'index,user_id'")
            out.add(int(index), user_id)
        return out


class ShardStore:
    """Encrypted shards held by one server process.

    Needs the public key to create zero shards and the Galois keys to rotate
    registrations into place; never a secret key.
    """

    def __init__(
        self,
        backend: HeBackend,
        public_key: PublicKey,
        galois_keys: GaloisKeys,
        layout: SlotLayout | None = None,
    ):
        self.backend = backend
        self.public_key = public_key
        self.galois_keys = galois_keys
        self.layout = layout or SlotLayout(backend.slot_count)
        self._shards: dict[int, RegistryShard] = {}
        self._locks: dict[int, threading.Lock] = {}
        self._guard = threading.Lock()
        self._io_lock = threading.Lock()
        self._writers: dict[tuple[int, int], str] = {}
        self._revoked: set[str] = set()

    def __len__(self) -> int:
        return len(self._shards)

    @property
    def shard_indices(self) -> list[int]:
        return sorted(self._shards.copy())

    def _lock_for(self, shard_index: int) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(shard_index, threading.Lock())

    def zero_shard(self, shard_index: int) -> RegistryShard:
        zeros = self.backend.encode(np.zeros(self.backend.slot_count))
        ct = self.backend.encrypt(zeros, self.public_key)
        return RegistryShard(shard_index, ct, np.zeros(self.layout.capacity, dtype=bool))

    def get(self, shard_index: int) -> RegistryShard:
        try:
            return self._shards[shard_index]
        except KeyError as e:
            raise BoundsError(f"shard {shard_index} does not exist") from e

    def snapshot(self) -> list[RegistryShard]:
        """Current shards in index order."""
        shards = self._shards.copy()
        return [shards[i] for i in sorted(shards)]

    def register(
        self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str | None = None
    ) -> RegistryShard:
        """Rotate the registration right into block ``local_index`` and add it.

        ``attempt`` tags the write so that :meth:`revoke` can undo it later.

        Raises:
            BoundsError: If local_index is outside the shard
            ConflictError: If the block is already occupied or the attempt was revoked
            AlignmentError: If c_u does not match the shard's level or params
        """
        if not 0 <= local_index < self.layout.capacity:
            raise BoundsError(f"local index {local_index} outside [0, {self.layout.capacity})")
        if shard_index < 0:
            raise BoundsError(f"shard index {shard_index} is negative")
        with self._lock_for(shard_index):
            if attempt is not None and attempt in self._revoked:
                self._revoked.discard(attempt)
                raise ConflictError(f"registration attempt {attempt} was revoked")
            shard = self._shards.get(shard_index) or self.zero_shard(shard_index)
            if shard.occupancy[local_index]:
                raise ConflictError(f"block {local_index} of shard {shard_index} is occupied")
            if c_u.level != shard.ciphertext.level:
                raise AlignmentError(
                    f"registration at level {c_u.level}, shard at level {shard.ciphertext.level}"
                )
            rotated = self._place(c_u, local_index)
            occupancy = shard.occupancy.copy()
            occupancy[local_index] = True
            updated = RegistryShard(shard_index, self.backend.add(shard.ciphertext, rotated), occupancy)
            self._shards[shard_index] = updated
            if attempt is not None:
                self._writers[(shard_index, local_index)] = attempt
        logger.debug(f"Registered block {local_index} of shard {shard_index}")
        return updated

    def revoke(self, c_u: Ciphertext, shard_index: int, local_index: int, attempt: str) -> bool:
        """Undo the registration tagged ``attempt``, whether or not it has landed yet.

        Returns True if the block was written and has been cleared. Otherwise
        the attempt is remembered and a late :meth:`register` for it fails.
        """
        with self._lock_for(shard_index):
            if self._writers.get((shard_index, local_index)) != attempt:
                self._revoked.add(attempt)
                logger.debug(f"Revoked pending registration {attempt}")
                return False
            shard = self._shards[shard_index]
            occupancy = shard.occupancy.copy()
            occupancy[local_index] = False
            cleared = self.backend.sub(shard.ciphertext, self._place(c_u, local_index))
            self._shards[shard_index] = RegistryShard(shard_index, cleared, occupancy)
            del self._writers[(shard_index, local_index)]
        logger.info(f"Rolled back block {local_index} of shard {shard_index}")
        return True

    def _place(self, c_u: Ciphertext, local_index: int) -> Ciphertext:
        return self.backend.rotate(c_u, -self.layout.width * local_index, self.galois_keys)

    def load_packed_shard(self, shard_index: int, ciphertext: Ciphertext, occupancy: BoolMask) -> RegistryShard:
        """Install a shard encrypted directly in shard layout."""
        occ = self.layout.check_occupancy(occupancy).copy()
        if ciphertext.digest != self.backend.params.digest:
            raise AlignmentError("packed shard was encrypted under different parameters")
        with self._lock_for(shard_index):
            if shard_index in self._shards:
                raise ConflictError(f"shard {shard_index} already exists")
            shard = RegistryShard(shard_index, ciphertext, occ)
            self._shards[shard_index] = shard
        return shard

    def _write_shard(self, directory: Path, shard: RegistryShard) -> None:
        path = directory / SHARD_FILE_TEMPLATE.format(index=shard.shard_index)
        path.write_bytes(serialize_ciphertext(shard.ciphertext, self.backend.params))

    def _write_occupancy(self, directory: Path, shards: list[RegistryShard]) -> None:
        lines = [OCCUPANCY_HEADER, f"capacity,{self.layout.capacity}"]
        lines.extend(f"{s.shard_index},{bits_to_hex(s.occupancy)}" for s in shards)
        (directory / OCCUPANCY_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def persist(self, directory: Path) -> None:
        directory.mkdir(parents=True, exist_ok=True)
        shards = self.snapshot()
        for shard in shards:
            self._write_shard(directory, shard)
        self._write_occupancy(directory, shards)
        logger.debug(f"Persisted {len(shards)} shards to {directory}")

    def persist_shard(self, directory: Path, shard_index: int) -> None:
        """Rewrite one shard file and the occupancy table."""
        directory.mkdir(parents=True, exist_ok=True)
        with self._io_lock:
            self._write_shard(directory, self.get(shard_index))
            self._write_occupancy(directory, self.snapshot())

    def load(self, directory: Path) -> None:
        """Replace the in-memory shards with those stored under directory."""
        path = directory / OCCUPANCY_FILE
        if not path.exists():
            self._shards = {}
            return
        lines = path.read_text(encoding="utf-8").splitlines()
        if len(lines) < 2 or lines[0] != OCCUPANCY_HEADER:
            raise FormatError(f"{path}: missing or unsupported header")
        if lines[1] != f"capacity,{self.layout.capacity}":
            raise FormatError(f"{path}: shard capacity differs from {self.layout.capacity}")
        shards: dict[int, RegistryShard] = {}
        for line in lines[2:]:
            if not line:
                continue
            index_text, sep, bits = line.partition(",")
            if not sep or not index_text.isdigit():
                raise FormatError(f"{path}: malformed line {line[:40]!r}")
            index = int(index_text)
            blob_path = directory / SHARD_FILE_TEMPLATE.format(index=index)
            try:
                blob = blob_path.read_bytes()
            except FileNotFoundError as e:
                raise FormatError(f"shard file {blob_path} missing") from e
            ct = deserialize_ciphertext(blob, self.backend.params)
            shards[index] = RegistryShard(index, ct, hex_to_bits(bits, self.layout.capacity))
        self._shards = shards
        self._writers.clear()
        logger.debug(f"Loaded {len(shards)} shards from {directory}")


class Registry:
    """Single-process registry: shard store plus identity map."""

    def __init__(self, store: ShardStore, identities: IdentityMap | None = None):
        self.store = store
        self.identities = identities or IdentityMap()
        self.layout = store.layout
        self._enroll_lock = threading.Lock()

    def allocate(self) -> tuple[int, int]:
        return self.layout.allocate(self.identities.next_index())

    def register(self, c_u: Ciphertext, user_id: str) -> int:
        """Place a registration ciphertext and record its identity; returns the global index."""
        check_user_id(user_id)
        with self._enroll_lock:
            shard_index, local_index = self.allocate()
            self.store.register(c_u, shard_index, local_index)
            global_index = self.layout.global_index(shard_index, local_index)
            self.identities.add(global_index, user_id)
        logger.info(f"Enrolled user at global index {global_index}")
        return global_index

    def load_packed_shard(self, shard_index: int, ciphertext: Ciphertext, user_ids: Sequence[str]) -> None:
        """Install a bulk-packed shard whose blocks 0..len(user_ids)-1 are filled."""
        for user_id in user_ids:
            check_user_id(user_id)
        occupancy = np.zeros(self.layout.capacity, dtype=bool)
        occupancy[: len(user_ids)] = True
        with self._enroll_lock:
            self.store.load_packed_shard(shard_index, ciphertext, occupancy)
            for local, user_id in enumerate(user_ids):
                self.identities.add(self.layout.global_index(shard_index, local), user_id)

    def lookup_identity(self, global_index: int) -> str:
        return self.identities.lookup(global_index)

    def persist(self, directory: Path) -> None:
        self.store.persist(directory)
        self.identities.persist(directory)

    def load(self, directory: Path) -> None:
        """Load shards and identities, checking that both agree.

        Raises:
            FormatError: If an identity has no occupancy bit or vice versa
        """
        self.store.load(directory)
        identities = IdentityMap.load(directory)
        occupied = {
            self.layout.global_index(s.shard_index, int(j))
            for s in self.store.snapshot()
            for j in np.flatnonzero(s.occupancy)
        }
        if occupied != set(identities):
            raise FormatError("identity map and occupancy disagree")
        self.identities = identities
