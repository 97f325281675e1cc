"""Allocation registry: every tracked allocation and its coherence state.

The registry publishes an immutable :class:`Snapshot` on every mutation.
Readers (the fault handler, the dependency resolver) grab ``registry.snapshot``
once and work on it without locks; writers build a new snapshot under the
registry lock and swap it in with a single attribute store.
"""
from __future__ import annotations

import bisect
import enum
import itertools
import mmap
import threading
from dataclasses import dataclass, replace
from typing import Callable, Iterator, Mapping

import numpy as np


class RegistryError(Exception):
    pass


class AllocationKind(str, enum.Enum):
    MANAGED = "managed"
    DEVICE = "device"
    PLAIN_HOST = "plain-host"


class SchemeKind(str, enum.Enum):
    MIRROR = "mirror"
    DEVICE = "device"
    ADVISE = "advise"
    PASSTHROUGH = "passthrough"


class CoherenceState(str, enum.Enum):
    HOST_VALID = "HostValid"
    DEVICE_VALID = "DeviceValid"
    # Reserved; none of the shipped schemes enters it.
    BOTH_VALID = "BothValid"


_ALLOWED = {
    (CoherenceState.HOST_VALID, CoherenceState.DEVICE_VALID),
    (CoherenceState.DEVICE_VALID, CoherenceState.HOST_VALID),
}


@dataclass(frozen=True)
class AllocationRecord:
    id: int
    base: int
    len: int
    kind: AllocationKind
    scheme: SchemeKind
    state: CoherenceState
    shadow: int | None = None
    generation: int = 0

    @property
    def end(self) -> int:
        return self.base + self.len

    def contains(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.len


class Snapshot:
    """Immutable view of the live records, ordered by base address."""

    __slots__ = ("bases", "ends", "ids", "records", "_bases_arr", "_ends_arr")

    def __init__(self, bases: tuple[int, ...], ends: tuple[int, ...],
                 ids: tuple[int, ...], records: Mapping[int, AllocationRecord]):
        self.bases = bases
        self.ends = ends
        self.ids = ids
        self.records = records
        self._bases_arr = None
        self._ends_arr = None

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[AllocationRecord]:
        return (self.records[i] for i in self.ids)

    def lookup(self, addr: int) -> int | None:
        i = bisect.bisect_right(self.bases, addr) - 1
        if i >= 0 and addr < self.ends[i]:
            return self.ids[i]
        return None

    def record_at(self, addr: int) -> AllocationRecord | None:
        rid = self.lookup(addr)
        return None if rid is None else self.records[rid]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted ``(bases, ends)`` as uint64 arrays, built lazily for the scan kernel."""
        if self._bases_arr is None:
            self._bases_arr = np.array(self.bases, dtype=np.uint64)
            self._ends_arr = np.array(self.ends, dtype=np.uint64)
        return self._bases_arr, self._ends_arr

    def with_record(self, rec: AllocationRecord) -> "Snapshot":
        records = dict(self.records)
        records[rec.id] = rec
        snap = Snapshot(self.bases, self.ends, self.ids, records)
        snap._bases_arr, snap._ends_arr = self._bases_arr, self._ends_arr
        return snap


_EMPTY = Snapshot((), (), (), {})


def round_up(n: int, page: int) -> int:
    return -(-n // page) * page


class Registry:
    """Owns allocation records; thread-safe for concurrent callers.

    ``on_unregister`` is invoked with the removed record (outside the registry
    lock) so the owner can free the device shadow and drop protection.
    """

    def __init__(self, page_size: int | None = None,
                 on_unregister: Callable[[AllocationRecord], None] | None = None):
        self.page_size = page_size or mmap.PAGESIZE
        if self.page_size <= 0 or self.page_size & (self.page_size - 1):
            raise ValueError(f"page size must be a power of two, got {self.page_size}")
        self.on_unregister = on_unregister
        self.snapshot: Snapshot = _EMPTY
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._claims: dict[int, threading.Lock] = {}

    def register(self, base: int, length: int, kind: AllocationKind | str,
                 scheme: SchemeKind | str) -> int:
        kind = AllocationKind(kind)
        scheme = SchemeKind(scheme)
        if length <= 0:
            raise RegistryError(f"cannot register zero-length range at {base:#x}")
        if base % self.page_size:
            raise RegistryError(f"base {base:#x} is not aligned to page size {self.page_size}")
        length = round_up(length, self.page_size)
        state = (CoherenceState.DEVICE_VALID if kind is AllocationKind.DEVICE
                 else CoherenceState.HOST_VALID)
        with self._lock:
            snap = self.snapshot
            i = bisect.bisect_right(snap.bases, base)
            if i > 0 and snap.ends[i - 1] > base:
                other = snap.records[snap.ids[i - 1]]
                raise RegistryError(
                    f"[{base:#x}, {base + length:#x}) overlaps record {other.id} "
                    f"[{other.base:#x}, {other.end:#x})")
            if i < len(snap.bases) and snap.bases[i] < base + length:
                other = snap.records[snap.ids[i]]
                raise RegistryError(
                    f"[{base:#x}, {base + length:#x}) overlaps record {other.id} "
                    f"[{other.base:#x}, {other.end:#x})")
            rid = next(self._ids)
            rec = AllocationRecord(rid, base, length, kind, scheme, state,
                                   shadow=base if kind is AllocationKind.DEVICE else None)
            records = dict(snap.records)
            records[rid] = rec
            self._claims[rid] = threading.Lock()
            self.snapshot = Snapshot(
                snap.bases[:i] + (base,) + snap.bases[i:],
                snap.ends[:i] + (base + length,) + snap.ends[i:],
                snap.ids[:i] + (rid,) + snap.ids[i:],
                records)
        return rid

    def unregister(self, rid: int) -> AllocationRecord:
        with self._lock:
            snap = self.snapshot
            rec = snap.records.get(rid)
            if rec is None:
                raise RegistryError(f"unknown allocation id {rid}")
            i = snap.ids.index(rid)
            records = dict(snap.records)
            del records[rid]
            self.snapshot = Snapshot(snap.bases[:i] + snap.bases[i + 1:],
                                     snap.ends[:i] + snap.ends[i + 1:],
                                     snap.ids[:i] + snap.ids[i + 1:], records)
            self._claims.pop(rid, None)
        if self.on_unregister is not None:
            self.on_unregister(rec)
        return rec

    def lookup(self, addr: int) -> int | None:
        return self.snapshot.lookup(addr)

    def get(self, rid: int) -> AllocationRecord:
        try:
            return self.snapshot.records[rid]
        except KeyError:
            raise RegistryError(f"unknown allocation id {rid}") from None

    def claim(self, rid: int) -> threading.Lock:
        """Per-record migration lock, created at registration time."""
        try:
            return self._claims[rid]
        except KeyError:
            raise RegistryError(f"unknown allocation id {rid}") from None

    def transition(self, rid: int, state: CoherenceState, *, shadow: int | None = None,
                   bump_generation: bool = False) -> AllocationRecord:
        """Move a record along the HostValid <-> DeviceValid edge."""
        with self._lock:
            rec = self.get(rid)
            if rec.kind is AllocationKind.DEVICE:
                raise RegistryError(f"record {rid} is device memory and never changes state")
            if rec.scheme is not SchemeKind.MIRROR:
                raise RegistryError(f"record {rid} uses scheme {rec.scheme.value}; "
                                    "only mirror records migrate")
            if (rec.state, state) not in _ALLOWED:
                raise RegistryError(f"illegal transition {rec.state.value} -> {state.value} "
                                    f"for record {rid}")
            if state is CoherenceState.DEVICE_VALID and shadow is None:
                raise RegistryError("DeviceValid requires a shadow address")
            new = replace(rec, state=state,
                          shadow=shadow if state is CoherenceState.DEVICE_VALID else None,
                          generation=rec.generation + (1 if bump_generation else 0))
            self.snapshot = self.snapshot.with_record(new)
        return new

    def __len__(self) -> int:
        return len(self.snapshot)

    def __iter__(self) -> Iterator[AllocationRecord]:
        return iter(self.snapshot)

