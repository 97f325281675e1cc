"""Shared plumbing for the synthetic mini-app workloads."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..codeobj.elf import ArgField, KernelDescriptor, ValueKind
from ..codeobj.emit import emit_code_object
from ..interposer import Interposer
from ..sim.runtime import LaunchContext, LaunchGeometry, SimKernel

WORKLOADS = ("stream", "cg", "hydro", "dock")

# Trailing implicit arguments every kernel carries, as a compiler would add them.
HIDDEN_ARGS = (("hidden_global_offset_x", 8), ("hidden_global_offset_y", 8),
               ("hidden_global_offset_z", 8))

# Fake host-stub addresses for statically registered kernels.
STUB_BASE = 0x0040_1000


class WorkloadError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    """``size`` is elements (stream), grid side (cg, hydro) or poses (dock).

    ``cadence`` is the host-access period in iterations; only hydro uses it.
    """

    name: str
    size: int
    iterations: int
    cadence: int = 0
    seed: int = 0
    extra: tuple[tuple[str, int], ...] = field(default=())

    def __post_init__(self):
        if self.name not in WORKLOADS:
            raise WorkloadError(f"unknown workload {self.name!r}; choose from {', '.join(WORKLOADS)}")
        if self.size <= 0 or self.iterations <= 0:
            raise WorkloadError("size and iterations must be positive")
        if self.cadence < 0:
            raise WorkloadError("cadence must be non-negative")
        if self.name == "hydro" and (self.cadence == 0 or self.iterations % self.cadence):
            raise WorkloadError(f"hydro cadence {self.cadence} must divide "
                                f"iterations {self.iterations}")
        for k, v in self.extra:
            if v <= 0:
                raise WorkloadError(f"{k} must be positive")

    def get(self, key: str, default: int) -> int:
        return dict(self.extra).get(key, default)

    def with_(self, **changes) -> "WorkloadSpec":
        return replace(self, **changes)


DEFAULTS = {
    "stream": dict(size=1 << 20, iterations=100),
    "cg": dict(size=64, iterations=20),
    "hydro": dict(size=32, iterations=300, cadence=20),
    "dock": dict(size=512, iterations=8, extra=(("natlig", 26), ("natpro", 938))),
}


def default_spec(name: str, **overrides) -> WorkloadSpec:
    if name not in DEFAULTS:
        raise WorkloadError(f"unknown workload {name!r}; choose from {', '.join(WORKLOADS)}")
    kw = dict(DEFAULTS[name])
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return WorkloadSpec(name, **kw)


def descriptor(name: str, *params: tuple[str, int]) -> KernelDescriptor:
    """Lay out ``params`` (``("ptr", 8)`` or ``("val", size)``) with natural alignment."""
    args, off = [], 0
    for kind, size in params:
        align = min(size, 8)
        off += -off % align
        vk = ValueKind.GLOBAL_BUFFER_ADDRESS if kind == "ptr" else ValueKind.BY_VALUE
        args.append(ArgField(off, size, vk))
        off += size
    for _, size in HIDDEN_ARGS:
        off += -off % 8
        args.append(ArgField(off, size, ValueKind.HIDDEN))
        off += size
    return KernelDescriptor(name, tuple(args), off)


def pack(desc: KernelDescriptor, *values: bytes) -> bytes:
    """Kernarg blob: each visible argument's bytes at its offset, hidden args zero."""
    blob = bytearray(desc.kernarg_size)
    visible = [a for a in desc.args if a.value_kind is not ValueKind.HIDDEN]
    if len(values) != len(visible):
        raise ValueError(f"{desc.mangled_name} takes {len(visible)} arguments, got {len(values)}")
    for a, v in zip(visible, values):
        if len(v) != a.size:
            raise ValueError(f"{desc.mangled_name}: argument at {a.offset} is {a.size} bytes, "
                             f"got {len(v)}")
        blob[a.offset:a.end] = v
    return bytes(blob)


def ptr(addr: int) -> bytes:
    return struct.pack("<Q", addr)


def capture(*fields: tuple[str, object]) -> bytes:
    """Packed closure-capture record: a 2-byte tag then ``(format, value)`` fields.

    The tag shifts every pointer to an offset that is 2 mod 8, the way a
    packed aggregate defeats naive 8-byte-aligned pointer scanning.
    """
    out = struct.pack("<H", 0xC0DE)
    for fmt, value in fields:
        out += struct.pack("<" + fmt, value)
    return out


def checksum(buffers: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(buffers):
        h.update(name.encode())
        h.update(np.ascontiguousarray(buffers[name]).tobytes())
    return h.hexdigest()


class App:
    """The application side of a run.  It speaks to the runtime only through the interposer."""

    def __init__(self, ip: Interposer, kernels: Sequence[KernelDescriptor],
                 bodies: dict[str, Callable[[LaunchContext], None]], *, dynamic: bool = False):
        self.ip = ip
        self.desc = {k.mangled_name: k for k in kernels}
        for k in kernels:
            ip.sim.register_kernel(SimKernel(k.mangled_name, bodies[k.mangled_name]))
        image = emit_code_object(kernels)
        if dynamic:
            module = ip.module_load(image)
            self.handles = {k.mangled_name: ip.module_get_function(module, k.mangled_name)
                            for k in kernels}
        else:
            ip.load_code_object(image)
            self.handles = {}
            for i, k in enumerate(kernels):
                handle = STUB_BASE + 16 * i
                ip.register_function(handle, k.mangled_name)
                self.handles[k.mangled_name] = handle

    def alloc(self, array: np.ndarray) -> int:
        """Managed allocation initialised from ``array`` by ordinary host stores."""
        data = np.ascontiguousarray(array)
        addr = self.ip.managed_alloc(data.nbytes)
        self.ip.view(addr, np.uint8, data.nbytes, write=True)[:] = data.view(np.uint8).ravel()
        return addr

    def read(self, addr: int, dtype, count: int) -> np.ndarray:
        return self.ip.view(addr, dtype, count).copy()

    def launch(self, name: str, *values: bytes, grid: int = 1) -> None:
        blob = pack(self.desc[name], *values)
        self.ip.launch(self.handles[name], blob, LaunchGeometry(grid=grid))
