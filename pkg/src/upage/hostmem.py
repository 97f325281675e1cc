"""Simulated process address space with POSIX-style page protection.

Host code never touches simulated memory through raw pointers; it asks for a
NumPy view of ``[addr, addr + nbytes)``.  Each request is checked page by page
against the protection table exactly like a hardware MMU would: the first
page that forbids the access raises a synchronous fault that is delivered to
the installed handler on the calling thread, and the access is retried once
the handler returns.  Unmapped addresses fault the same way, so an installed
handler sees every violation and must chain the ones it does not own.

``raw()`` is the one door around protection.  It stands for a second,
always-writable alias of the same pages and is what DMA engines use.
"""
from __future__ import annotations

import bisect
import mmap
import threading
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

PROT_NONE = 0
PROT_READ = 1
PROT_WRITE = 2
PROT_RW = PROT_READ | PROT_WRITE

HOST_ARENA_BASE = 0x5500_0000_0000
HOST_ARENA_SIZE = 1 << 40

# Bounded so a handler that "handles" a fault without fixing it cannot spin forever.
MAX_FAULT_RETRIES = 64


class SegmentationFault(Exception):
    """An access violation nobody handled; the simulated process is dead."""

    def __init__(self, addr: int, reason: str = "access violation"):
        super().__init__(f"{reason} at {addr:#x}")
        self.addr = addr


class OutOfMemory(MemoryError):
    pass


FaultHandler = Callable[[int], None]


def default_handler(addr: int) -> None:
    raise SegmentationFault(addr)


class RangeAllocator:
    """First-fit allocator over a fixed address window with coalescing free."""

    def __init__(self, base: int, size: int):
        self.base = base
        self.size = size
        self._free: list[tuple[int, int]] = [(base, base + size)]
        self._live: dict[int, int] = {}
        self._lock = threading.Lock()

    @property
    def live_bytes(self) -> int:
        return sum(self._live.values())

    def __contains__(self, addr: int) -> bool:
        return self.base <= addr < self.base + self.size

    def alloc(self, nbytes: int, align: int = 1, phase: int = 0) -> int:
        """Reserve ``nbytes`` at an address congruent to ``phase`` modulo ``align``."""
        if nbytes <= 0:
            raise ValueError("allocation size must be positive")
        with self._lock:
            for i, (lo, hi) in enumerate(self._free):
                start = lo + ((phase - lo) % align)
                if start + nbytes <= hi:
                    pieces = []
                    if start > lo:
                        pieces.append((lo, start))
                    if start + nbytes < hi:
                        pieces.append((start + nbytes, hi))
                    self._free[i:i + 1] = pieces
                    self._live[start] = nbytes
                    return start
        raise OutOfMemory(f"cannot allocate {nbytes} bytes "
                          f"({self.live_bytes} of {self.size} in use)")

    def size_of(self, addr: int) -> int:
        return self._live[addr]

    def free(self, addr: int) -> int:
        with self._lock:
            try:
                nbytes = self._live.pop(addr)
            except KeyError:
                raise ValueError(f"{addr:#x} is not a live allocation") from None
            lo, hi = addr, addr + nbytes
            i = bisect.bisect_left(self._free, (lo, hi))
            if i > 0 and self._free[i - 1][1] == lo:
                i -= 1
                lo = self._free[i][0]
                del self._free[i]
            if i < len(self._free) and self._free[i][0] == hi:
                hi = self._free[i][1]
                del self._free[i]
            self._free.insert(i, (lo, hi))
            return nbytes


class Mapping(Protocol):
    """Host-visible window onto memory owned by someone else (device BAR)."""

    def resolve(self, addr: int, nbytes: int, write: bool) -> np.ndarray: ...


@dataclass
class Region:
    base: int
    length: int
    data: np.ndarray
    # Called before a CPU access; lets a runtime migrate managed pages home.
    on_access: Callable[[int, int, bool], None] | None = None
    tag: str = ""

    @property
    def end(self) -> int:
        return self.base + self.length


@dataclass
class _Window:
    lo: int
    hi: int
    mapping: Mapping = field(repr=False)


class HostMemory:
    def __init__(self, page_size: int | None = None, base: int = HOST_ARENA_BASE,
                 size: int = HOST_ARENA_SIZE):
        self.page_size = page_size or mmap.PAGESIZE
        self._arena = RangeAllocator(base, size)
        self._bases: list[int] = []
        self._regions: dict[int, Region] = {}
        self._windows: list[_Window] = []
        self._prot: dict[int, int] = {}
        self._handler: FaultHandler = default_handler
        self._lock = threading.Lock()
        self.faults_delivered = 0

    # -- mapping ---------------------------------------------------------
    def mmap(self, length: int, *, align: int | None = None, phase: int = 0,
             on_access: Callable[[int, int, bool], None] | None = None,
             tag: str = "") -> int:
        if length <= 0:
            raise ValueError("mmap length must be positive")
        page = self.page_size
        length = -(-length // page) * page
        addr = self._arena.alloc(length, align or page, phase)
        region = Region(addr, length, np.zeros(length, dtype=np.uint8), on_access, tag)
        with self._lock:
            bisect.insort(self._bases, addr)
            self._regions[addr] = region
        return addr

    def munmap(self, addr: int) -> None:
        with self._lock:
            region = self._regions.pop(addr, None)
            if region is None:
                raise ValueError(f"{addr:#x} is not the base of a mapping")
            self._bases.remove(addr)
            first = addr // self.page_size
            for p in range(first, first + region.length // self.page_size):
                self._prot.pop(p, None)
        self._arena.free(addr)

    def add_window(self, lo: int, hi: int, mapping: Mapping) -> None:
        self._windows.append(_Window(lo, hi, mapping))

    def region(self, addr: int) -> Region | None:
        i = bisect.bisect_right(self._bases, addr) - 1
        if i >= 0:
            r = self._regions.get(self._bases[i])
            if r is not None and addr < r.end:
                return r
        return None

    def _window(self, addr: int) -> _Window | None:
        for w in self._windows:
            if w.lo <= addr < w.hi:
                return w
        return None

    # -- protection ------------------------------------------------------
    def mprotect(self, addr: int, length: int, prot: int) -> None:
        page = self.page_size
        if addr % page:
            raise ValueError(f"mprotect address {addr:#x} is not page aligned")
        region = self.region(addr)
        if region is None or addr + length > region.end:
            raise ValueError(f"mprotect range [{addr:#x}, {addr + length:#x}) is not mapped")
        first = addr // page
        last = -(-(addr + length) // page)
        if prot == PROT_RW:
            for p in range(first, last):
                self._prot.pop(p, None)
        else:
            for p in range(first, last):
                self._prot[p] = prot

    def protection(self, addr: int) -> int:
        return self._prot.get(addr // self.page_size, PROT_RW)

    def is_protected(self, addr: int) -> bool:
        return (addr // self.page_size) in self._prot

    def protected_pages(self) -> frozenset[int]:
        return frozenset(self._prot)

    def sigaction(self, handler: FaultHandler | None) -> FaultHandler:
        """Install ``handler`` (``None`` restores the default); return the previous one."""
        prev = self._handler
        self._handler = handler or default_handler
        return prev

    # -- access ----------------------------------------------------------
    def _violation(self, addr: int, nbytes: int, write: bool) -> int | None:
        region = self.region(addr)
        if region is None:
            return None if self._window(addr) is not None else addr
        if addr + nbytes > region.end:
            return region.end
        prot = self._prot
        if prot:
            need = PROT_WRITE if write else PROT_READ
            page = self.page_size
            for p in range(addr // page, (addr + nbytes - 1) // page + 1):
                if not prot.get(p, PROT_RW) & need:
                    return max(addr, p * page)
        return None

    def access(self, addr: int, nbytes: int, write: bool = False) -> np.ndarray:
        """CPU access to ``[addr, addr + nbytes)``; returns a uint8 view."""
        if nbytes <= 0:
            raise ValueError("access length must be positive")
        for _ in range(MAX_FAULT_RETRIES):
            fault = self._violation(addr, nbytes, write)
            if fault is None:
                break
            self.faults_delivered += 1
            self._handler(fault)
        else:
            raise SegmentationFault(addr, "fault handler did not resolve access")
        region = self.region(addr)
        if region is None:
            return self._window(addr).mapping.resolve(addr, nbytes, write)
        if region.on_access is not None:
            region.on_access(addr, nbytes, write)
        off = addr - region.base
        return region.data[off:off + nbytes]

    def view(self, addr: int, dtype, count: int, write: bool = False) -> np.ndarray:
        dtype = np.dtype(dtype)
        return self.access(addr, dtype.itemsize * count, write).view(dtype)

    def read(self, addr: int, nbytes: int) -> bytes:
        return self.access(addr, nbytes).tobytes()

    def write(self, addr: int, data) -> None:
        buf = np.frombuffer(bytes(data), dtype=np.uint8)
        self.access(addr, len(buf), write=True)[:] = buf

    def raw(self, addr: int, nbytes: int) -> np.ndarray:
        """Protection-bypassing alias of host pages (DMA and write-back path)."""
        region = self.region(addr)
        if region is None or addr + nbytes > region.end:
            raise SegmentationFault(addr, "raw access outside host mapping")
        off = addr - region.base
        return region.data[off:off + nbytes]
