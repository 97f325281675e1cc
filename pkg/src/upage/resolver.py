"""Which tracked allocations can a kernel launch touch?

Buffer arguments are read directly.  By-value arguments (lambda captures and
other aggregates with no recorded layout) are scanned with an 8-byte window
sliding in 2-byte steps; every window value that lands inside a live
allocation counts.  Only the first level is followed: an allocation that
itself stores pointers contributes nothing beyond itself.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from . import kernels
from .codeobj.elf import KernelDescriptor, ValueKind
from .registry import Registry, Snapshot

WORD = 8
SCAN_STRIDE = 2


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class Match:
    offset: int
    value: int
    record_id: int
    direct: bool


@dataclass(frozen=True)
class LaunchDependencies:
    ids: frozenset[int]
    direct_hits: int
    scanned_hits: int
    matches: tuple[Match, ...] = ()


def resolve(arg_blob: bytes, desc: KernelDescriptor,
            registry: Registry | Snapshot) -> LaunchDependencies:
    snap = registry.snapshot if isinstance(registry, Registry) else registry
    blob = bytes(arg_blob)
    if len(blob) < desc.blob_size:
        raise ResolutionError(f"{desc.mangled_name}: argument blob has {len(blob)} bytes, "
                              f"descriptor needs {desc.blob_size}")
    matches: list[Match] = []
    direct = scanned = 0
    bases, ends = snap.arrays()
    for arg in desc.args:
        if arg.value_kind is ValueKind.GLOBAL_BUFFER_ADDRESS:
            (value,) = struct.unpack_from("<Q", blob, arg.offset)
            rid = snap.lookup(value)
            if rid is not None:
                direct += 1
                matches.append(Match(arg.offset, value, rid, True))
        elif arg.value_kind is ValueKind.BY_VALUE and arg.size >= WORD:
            for off, value, idx in kernels.scan_windows(
                    blob, arg.offset, arg.offset + arg.size - WORD, SCAN_STRIDE, bases, ends):
                scanned += 1
                matches.append(Match(off, value, snap.ids[idx], False))
    return LaunchDependencies(frozenset(m.record_id for m in matches), direct, scanned,
                              tuple(matches))
