"""Deterministic in-process stand-in for a GPU runtime.

Memory lives in NumPy byte arrays.  Device allocations come from a private
address window (host-visible through :class:`HostMemory`, at interconnect
cost).  Managed allocations live in host pages, carry an optional device
twin, and migrate only when prefetched or when the CPU touches them while
they are device resident.

Every cost is charged to the trace clock; nothing reads a wall clock.
"""
from __future__ import annotations

import bisect
import enum
import itertools
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..codeobj.table import read_std_string
from ..hostmem import HostMemory, OutOfMemory, RangeAllocator
from ..trace import Trace
from .model import DeviceModel

DEVICE_BASE = 0x7F00_0000_0000
DEVICE_ALIGN = 4096

# libstdc++ std::string: {char* ptr; size_t len; union {char buf[16]; size_t cap;}}
DEVICE_FUNC_NAME_OFFSET = 144
DEVICE_FUNC_SIZE = 256


class SimulatorError(Exception):
    pass


class SimulatorIntegrityError(SimulatorError):
    """A simulated kernel touched memory the device could never reach."""


class Direction(str, enum.Enum):
    H2D = "H2D"
    D2H = "D2H"


@dataclass
class LaunchGeometry:
    grid: int = 1
    block: int = 256


@dataclass
class LaunchResult:
    name: str
    bytes_touched: int
    mem_time: float
    compute_time: float
    duration: float


@dataclass
class SimKernel:
    name: str
    body: Callable[["LaunchContext"], None]


@dataclass
class Module:
    id: int
    names: frozenset[str]


@dataclass(frozen=True)
class FunctionHandle:
    """What a dynamic module lookup returns: the name travels with the handle.

    ``address`` points at a synthetic device-function structure in host memory
    whose name field sits at :data:`DEVICE_FUNC_NAME_OFFSET`.
    """

    module: int
    name: str
    address: int


@dataclass
class _Managed:
    base: int
    length: int
    twin: int | None = None
    on_device: bool = False
    preferred: str | None = None


class LaunchContext:
    """Handed to kernel bodies; the only way a body reaches memory."""

    def __init__(self, sim: "DeviceSim", blob: bytes, geometry: LaunchGeometry):
        self.sim = sim
        self.blob = blob
        self.geometry = geometry
        self.bytes_touched = 0
        self.mem_time = 0.0
        self.flop_count = 0.0

    def u64(self, offset: int) -> int:
        return struct.unpack_from("<Q", self.blob, offset)[0]

    def i32(self, offset: int) -> int:
        return struct.unpack_from("<i", self.blob, offset)[0]

    def f64(self, offset: int) -> float:
        return struct.unpack_from("<d", self.blob, offset)[0]

    def f32(self, offset: int) -> float:
        return struct.unpack_from("<f", self.blob, offset)[0]

    def view(self, addr: int, dtype, count: int) -> np.ndarray:
        dtype = np.dtype(dtype)
        nbytes = dtype.itemsize * count
        raw, bw_time = self.sim._device_view(addr, nbytes)
        self.bytes_touched += nbytes
        self.mem_time += bw_time
        return raw.view(dtype)

    def flops(self, n: float) -> None:
        self.flop_count += n


class DeviceSim:
    def __init__(self, model: DeviceModel, host: HostMemory | None = None,
                 trace: Trace | None = None):
        self.model = model
        self.host = host if host is not None else HostMemory(model.page_size)
        self.trace = trace if trace is not None else Trace()
        self._pool = RangeAllocator(DEVICE_BASE, model.capacity)
        self._dev: dict[int, np.ndarray] = {}
        self._dev_bases: list[int] = []
        self._resident: set[int] = set()
        self._managed: dict[int, _Managed] = {}
        self._kernels: dict[str, SimKernel] = {}
        self._functions: dict[int, str] = {}
        self._modules: dict[int, Module] = {}
        self._module_ids = itertools.count(1)
        self.host.add_window(DEVICE_BASE, DEVICE_BASE + model.capacity, self)

    @property
    def clock(self) -> float:
        return self.trace.clock

    # -- device memory ---------------------------------------------------
    def device_alloc(self, nbytes: int) -> int:
        if nbytes <= 0:
            raise ValueError("device allocation size must be positive")
        size = -(-nbytes // DEVICE_ALIGN) * DEVICE_ALIGN
        try:
            addr = self._pool.alloc(size, DEVICE_ALIGN)
        except OutOfMemory as exc:
            raise OutOfMemory(f"device out of memory: {exc}") from None
        self._dev[addr] = np.zeros(size, dtype=np.uint8)
        bisect.insort(self._dev_bases, addr)
        return addr

    def device_free(self, addr: int) -> None:
        if addr not in self._dev:
            raise SimulatorError(f"{addr:#x} is not a live device allocation")
        self._pool.free(addr)
        del self._dev[addr]
        self._dev_bases.remove(addr)
        self._resident.discard(addr)

    @property
    def live_device_bytes(self) -> int:
        return self._pool.live_bytes

    def _device_slice(self, addr: int, nbytes: int) -> np.ndarray | None:
        i = bisect.bisect_right(self._dev_bases, addr) - 1
        if i < 0:
            return None
        base = self._dev_bases[i]
        buf = self._dev[base]
        off = addr - base
        if off + nbytes > len(buf):
            return None
        return buf[off:off + nbytes]

    def _device_base(self, addr: int) -> int:
        i = bisect.bisect_right(self._dev_bases, addr) - 1
        return self._dev_bases[i]

    def resolve(self, addr: int, nbytes: int, write: bool) -> np.ndarray:
        """Host-visible window onto device memory; each access crosses the interconnect."""
        view = self._device_slice(addr, nbytes)
        if view is None:
            raise SimulatorError(f"host access [{addr:#x}, +{nbytes}) outside device allocations")
        self.trace.emit("H2D" if write else "D2H", nbytes=nbytes, label="map",
                        advance=self.model.interconnect_time(nbytes))
        return view

    # -- managed memory --------------------------------------------------
    def managed_alloc(self, nbytes: int) -> int:
        """The runtime's own managed allocator (host resident until prefetched).

        With the alignment quirk on, allocations are carved the way a
        bookkeeping-prefixed sub-allocator would: page aligned but one page
        past a ``quirk_alignment`` boundary, which the runtime's migration
        verbs refuse.
        """
        m = self.model
        if m.advise_alignment_quirk:
            addr = self.host.mmap(nbytes, align=m.quirk_alignment, phase=m.page_size,
                                  on_access=self._managed_touch, tag="managed")
        else:
            addr = self.host.mmap(nbytes, on_access=self._managed_touch, tag="managed")
        length = self.host.region(addr).length
        self._managed[addr] = _Managed(addr, length)
        return addr

    def managed_free(self, addr: int) -> None:
        m = self._managed.pop(addr, None)
        if m is None:
            raise SimulatorError(f"{addr:#x} is not a managed allocation")
        if m.twin is not None:
            self.device_free(m.twin)
        self.host.munmap(addr)

    def _managed_of(self, addr: int) -> _Managed | None:
        region = self.host.region(addr)
        if region is None:
            return None
        return self._managed.get(region.base)

    def _managed_touch(self, addr: int, nbytes: int, write: bool) -> None:
        m = self._managed_of(addr)
        if m is not None and m.on_device:
            self._migrate(m, Direction.D2H, label="migrate")

    def _migrate(self, m: _Managed, direction: Direction, *, record_id: int | None = None,
                 label: str = "") -> None:
        if direction is Direction.H2D:
            if m.twin is None:
                m.twin = self.device_alloc(m.length)
            self._dev[m.twin][:m.length] = self.host.raw(m.base, m.length)
            m.on_device = True
        else:
            self.host.raw(m.base, m.length)[:] = self._dev[m.twin][:m.length]
            m.on_device = False
        self.trace.emit(direction.value, record_id=record_id, nbytes=m.length, label=label,
                        advance=self.model.transfer_time(m.length))

    def is_device_resident(self, addr: int) -> bool:
        m = self._managed_of(addr)
        return bool(m and m.on_device)

    def _aligned_for_migration(self, addr: int) -> bool:
        m = self.model
        need = m.quirk_alignment if m.advise_alignment_quirk else m.page_size
        return addr % need == 0

    def advise(self, addr: int, nbytes: int, hint: str = "preferred_location_device",
               record_id: int | None = None) -> bool:
        m = self._managed_of(addr)
        if m is None:
            raise SimulatorError(f"advise on non-managed address {addr:#x}")
        if not self._aligned_for_migration(addr):
            self.trace.emit("warning", record_id=record_id,
                            label=f"advise ignored: {addr:#x} misaligned")
            return False
        m.preferred = hint
        self.trace.emit("advise", record_id=record_id, label=hint)
        return True

    def prefetch(self, addr: int, nbytes: int, destination: str = "device",
                 record_id: int | None = None) -> bool:
        m = self._managed_of(addr)
        if m is None:
            raise SimulatorError(f"prefetch on non-managed address {addr:#x}")
        if destination not in ("device", "host"):
            raise ValueError(f"prefetch destination must be 'device' or 'host', got {destination!r}")
        if not self._aligned_for_migration(addr):
            self.trace.emit("warning", record_id=record_id,
                            label=f"prefetch ignored: {addr:#x} misaligned")
            return False
        to_device = destination == "device"
        if m.on_device == to_device:
            return True
        self.trace.emit("prefetch", record_id=record_id, label=destination)
        self._migrate(m, Direction.H2D if to_device else Direction.D2H,
                      record_id=record_id, label="prefetch")
        return True

    # -- transfers -------------------------------------------------------
    def copy(self, direction: Direction | str, src: int, dst: int, nbytes: int, *,
             record_id: int | None = None, label: str = "") -> None:
        direction = Direction(direction)
        if nbytes <= 0:
            raise SimulatorError("copy length must be positive")
        if direction is Direction.H2D:
            dev_addr = dst
            dev = self._device_slice(dst, nbytes)
            host = self._host_slice(src, nbytes)
            if dev is None or host is None:
                raise SimulatorError(f"invalid H2D range {src:#x} -> {dst:#x} (+{nbytes})")
            dev[:] = host
            self._resident.add(self._device_base(dev_addr))
        else:
            dev_addr = src
            dev = self._device_slice(src, nbytes)
            host = self._host_slice(dst, nbytes)
            if dev is None or host is None:
                raise SimulatorError(f"invalid D2H range {src:#x} -> {dst:#x} (+{nbytes})")
            host[:] = dev
            self._resident.discard(self._device_base(dev_addr))
        self.trace.emit(direction.value, record_id=record_id, nbytes=nbytes, label=label,
                        advance=self.model.transfer_time(nbytes))

    def _host_slice(self, addr: int, nbytes: int) -> np.ndarray | None:
        region = self.host.region(addr)
        if region is None or addr + nbytes > region.end:
            return None
        return self.host.raw(addr, nbytes)

    def resident_bytes(self) -> int:
        """Bytes on the device that arrived by migration (shadows and managed twins)."""
        total = sum(len(self._dev[a]) for a in self._resident)
        total += sum(m.length for m in self._managed.values() if m.on_device)
        return total

    # -- kernels ---------------------------------------------------------
    def register_kernel(self, kernel: SimKernel) -> None:
        self._kernels[kernel.name] = kernel

    def register_function(self, handle: int, name: str) -> None:
        if name not in self._kernels:
            raise SimulatorError(f"no kernel named {name!r}")
        self._functions[handle] = name

    def module_load(self, names) -> Module:
        names = frozenset(names)
        missing = names - set(self._kernels)
        if missing:
            raise SimulatorError(f"module references unknown kernels: {sorted(missing)}")
        mod = Module(next(self._module_ids), names)
        self._modules[mod.id] = mod
        return mod

    def module_get_function(self, module: Module, name: str) -> FunctionHandle:
        if name not in module.names:
            raise SimulatorError(f"module {module.id} has no function {name!r}")
        addr = self.host.mmap(DEVICE_FUNC_SIZE, tag="device-func")
        write_std_string(self.host, addr + DEVICE_FUNC_NAME_OFFSET, name)
        return FunctionHandle(module.id, name, addr)

    def kernel_for(self, handle) -> SimKernel:
        if isinstance(handle, FunctionHandle):
            name = handle.name
        else:
            name = self._functions.get(handle)
            if name is None and isinstance(handle, int) and self.host.region(handle) is not None:
                # A bare device-function address: read the name the loader stored there.
                try:
                    name = read_std_string(self._raw_read, handle + DEVICE_FUNC_NAME_OFFSET)
                except Exception:
                    name = None
            if name is None or name not in self._kernels:
                raise SimulatorError(f"unresolved kernel handle {handle!r}")
        return self._kernels[name]

    def _raw_read(self, addr: int, nbytes: int) -> bytes:
        return self.host.raw(addr, nbytes).tobytes()

    def _device_view(self, addr: int, nbytes: int) -> tuple[np.ndarray, float]:
        """What a kernel sees at ``addr`` and the time it takes to stream it."""
        m = self.model
        dev = self._device_slice(addr, nbytes)
        if dev is not None:
            return dev, m.device_time(nbytes)
        region = self.host.region(addr)
        if region is None or addr + nbytes > region.end:
            raise SimulatorIntegrityError(f"kernel access to unmapped address {addr:#x}")
        managed = self._managed.get(region.base)
        if managed is None:
            raise SimulatorIntegrityError(
                f"kernel access to non-managed host memory at {addr:#x}")
        page = self.host.page_size
        for p in range(addr // page, (addr + nbytes - 1) // page + 1):
            if self.host.is_protected(p * page):
                raise SimulatorIntegrityError(f"kernel access to protected host page {p * page:#x}")
        off = addr - managed.base
        if managed.on_device:
            return self._dev[managed.twin][off:off + nbytes], m.device_time(nbytes)
        return self.host.raw(addr, nbytes), m.interconnect_time(nbytes)

    def launch(self, handle, blob: bytes, geometry: LaunchGeometry | None = None) -> LaunchResult:
        kernel = self.kernel_for(handle)
        ctx = LaunchContext(self, bytes(blob), geometry or LaunchGeometry())
        kernel.body(ctx)
        compute = self.model.compute_time(ctx.flop_count)
        duration = self.model.launch_latency + compute + ctx.mem_time
        self.trace.advance(duration)
        return LaunchResult(kernel.name, ctx.bytes_touched, ctx.mem_time, compute, duration)


def write_std_string(host: HostMemory, addr: int, text: str) -> None:
    """Lay out a libstdc++-style ``std::string`` at ``addr`` in host memory."""
    data = text.encode()
    if len(data) < 16:
        ptr = addr + 16
        host.write(addr, struct.pack("<QQ", ptr, len(data)) + data.ljust(16, b"\0"))
    else:
        heap = host.mmap(len(data) + 1, tag="string")
        host.write(heap, data + b"\0")
        host.write(addr, struct.pack("<QQQ", heap, len(data), len(data)))

