"""Versioned object store with canonical and replica sides.

The canonical store serialises and numbers transactions. Records are never
removed: a delete adds a second tag, and an update is modelled as a delete
plus an insert. Replicas pull deltas between versions and may only be read
while their validity deadline has not passed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Generic, Hashable, Iterator, TypeVar

T = TypeVar("T")

Clock = Callable[[], float]


class DuplicateKey(ValueError):
    pass


class NoSuchObject(KeyError):
    pass


class VersionFromFuture(ValueError):
    pass


class VersionMismatch(ValueError):
    pass


class StaleReplica(RuntimeError):
    """A replica was read past its valid_until deadline without a refresh."""


@dataclass(frozen=True)
class TaggedObject(Generic[T]):
    """A payload tagged with the transactions that created and deleted it."""

    payload: T
    created: int
    deleted: int | None = None

    def __post_init__(self) -> None:
        if self.created < 1:
            raise ValueError("created transaction numbers start at 1")
        if self.deleted is not None and self.deleted <= self.created:
            raise ValueError("deleted must be strictly greater than created")

    def visible_at(self, version: int) -> bool:
        return self.created <= version and (self.deleted is None or self.deleted > version)


@dataclass(frozen=True)
class ReplicaUpdate(Generic[T]):
    """Delta between two versions of a replicated store."""

    from_version: int
    to_version: int
    additions: tuple[TaggedObject[T], ...]
    removals: frozenset[Hashable]
    valid_until: float

    def __post_init__(self) -> None:
        if self.from_version > self.to_version:
            raise ValueError("from_version must not exceed to_version")


class CanonicalStore(Generic[T]):
    """Single source of truth; serialises writes, serves deltas.

    ``key`` extracts the replication key from a payload. ``lifetime`` is
    the freshness window granted to replicas with each delta.
    """

    def __init__(self, key: Callable[[T], Hashable], lifetime: float = 3600.0,
                 clock: Clock = time.time):
        self._key = key
        self.lifetime = lifetime
        self._clock = clock
        self._records: list[TaggedObject[T]] = []
        self._live: dict[Hashable, int] = {}  # key -> index of visible record
        self._version = 0

    @property
    def version(self) -> int:
        return self._version

    def insert(self, payload: T) -> int:
        key = self._key(payload)
        if key in self._live:
            raise DuplicateKey(repr(key))
        self._version += 1
        self._records.append(TaggedObject(payload, self._version))
        self._live[key] = len(self._records) - 1
        return self._version

    def delete(self, key: Hashable) -> int:
        index = self._live.pop(key, None)
        if index is None:
            raise NoSuchObject(repr(key))
        self._version += 1
        record = self._records[index]
        self._records[index] = TaggedObject(record.payload, record.created, self._version)
        return self._version

    def replace(self, key: Hashable, payload: T) -> tuple[int, int]:
        """Update as removal plus simultaneous addition; two transactions."""
        return self.delete(key), self.insert(payload)

    def get(self, key: Hashable) -> T:
        index = self._live.get(key)
        if index is None:
            raise NoSuchObject(repr(key))
        return self._records[index].payload

    def visible(self) -> dict[Hashable, T]:
        return {k: self._records[i].payload for k, i in self._live.items()}

    def records(self) -> Iterator[TaggedObject[T]]:
        return iter(self._records)

    def get_updates(self, from_version: int) -> ReplicaUpdate[T]:
        if from_version < 0 or from_version > self._version:
            raise VersionFromFuture(f"{from_version} > {self._version}")
        to = self._version
        additions = tuple(
            record for record in self._records
            if record.created > from_version
            and (record.deleted is None or record.deleted > to)
        )
        removals = frozenset(
            self._key(record.payload) for record in self._records
            if record.created <= from_version
            and record.deleted is not None
            and from_version < record.deleted <= to
        )
        return ReplicaUpdate(from_version, to, additions, removals,
                             self._clock() + self.lifetime)


class Replica(Generic[T]):
    """Replica side of the store; refreshed by pulling deltas.

    ``fetch`` requests a delta from the canonical side given the replica's
    current version. Contents may be read only while fresh; ``objects``
    raises StaleReplica past the deadline.
    """

    def __init__(self, key: Callable[[T], Hashable],
                 fetch: Callable[[int], ReplicaUpdate[T]],
                 clock: Clock = time.time):
        self._key = key
        self._fetch = fetch
        self._clock = clock
        self._objects: dict[Hashable, T] = {}
        self.current_version = 0
        self.valid_until = float("-inf")

    def is_fresh(self) -> bool:
        return self._clock() < self.valid_until

    def apply(self, update: ReplicaUpdate[T]) -> None:
        if update.from_version != self.current_version:
            raise VersionMismatch(
                f"delta starts at {update.from_version}, replica at {self.current_version}"
            )
        # Atomic swap: build the new visible set, then publish it.
        objects = dict(self._objects)
        for key in update.removals:
            objects.pop(key, None)
        for record in update.additions:
            objects[self._key(record.payload)] = record.payload
        self._objects = objects
        self.current_version = update.to_version
        self.valid_until = update.valid_until

    def ensure_fresh(self) -> None:
        if not self.is_fresh():
            self.apply(self._fetch(self.current_version))

    def objects(self) -> dict[Hashable, T]:
        if not self.is_fresh():
            raise StaleReplica(
                f"replica expired at {self.valid_until}; refresh before reading"
            )
        return self._objects


# --- wire form -------------------------------------------------------------


def update_to_json(update: ReplicaUpdate[T], payload_to_json: Callable[[T], dict]) -> dict:
    return {
        "from_version": update.from_version,
        "to_version": update.to_version,
        "additions": [
            {"payload": payload_to_json(r.payload), "created": r.created,
             "deleted": r.deleted}
            for r in update.additions
        ],
        "removals": sorted(str(k) for k in update.removals),
        "valid_until": update.valid_until,
    }


def update_from_json(data: dict, payload_from_json: Callable[[dict], T],
                     key_from_str: Callable[[str], Hashable]) -> ReplicaUpdate[T]:
    return ReplicaUpdate(
        data["from_version"],
        data["to_version"],
        tuple(
            TaggedObject(payload_from_json(a["payload"]), a["created"], a["deleted"])
            for a in data["additions"]
        ),
        frozenset(key_from_str(k) for k in data["removals"]),
        data["valid_until"],
    )
