"""Allocation, free and launch interception driving one memory scheme.

mirror       host pages until a launch depends on them, then a device shadow;
             host touch writes the shadow back (see :mod:`upage.fault_engine`).
device       every managed allocation becomes device memory up front.
advise       allocations stay runtime-managed; launches prefetch dependencies.
passthrough  no interposition; kernels read host-resident managed memory.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .codeobj import RegistrationError, RegistrationTable
from .fault_engine import FaultEngine
from .hostmem import HostMemory, OutOfMemory
from .registry import AllocationKind, AllocationRecord, CoherenceState, Registry, SchemeKind
from .resolver import LaunchDependencies, Match, resolve
from .sim.model import DeviceModel
from .sim.runtime import DeviceSim, Direction, LaunchGeometry, LaunchResult
from .trace import Trace, emit_trace

ENV_MODE = "UPAGE_MODE"
ENV_TRACE = "UPAGE_TRACE"
ENV_MODEL = "UPAGE_MODEL"
ENV_FALLBACK = "UPAGE_FALLBACK_ON_OOM"


class InterposerError(Exception):
    pass


@dataclass(frozen=True)
class InterposerConfig:
    scheme: SchemeKind = SchemeKind.MIRROR
    model: DeviceModel = field(default_factory=DeviceModel)
    trace_path: str | None = None
    fallback_on_device_oom: bool = False

    def __post_init__(self):
        object.__setattr__(self, "scheme", SchemeKind(self.scheme))

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **overrides) -> "InterposerConfig":
        env = os.environ if env is None else env
        kw: dict = {}
        if env.get(ENV_MODE):
            try:
                kw["scheme"] = SchemeKind(env[ENV_MODE].strip().lower())
            except ValueError:
                raise InterposerError(f"{ENV_MODE}={env[ENV_MODE]!r} is not one of "
                                      f"{', '.join(s.value for s in SchemeKind)}") from None
        if env.get(ENV_MODEL):
            kw["model"] = DeviceModel.resolve(env[ENV_MODEL])
        if env.get(ENV_TRACE):
            kw["trace_path"] = env[ENV_TRACE]
        if env.get(ENV_FALLBACK):
            kw["fallback_on_device_oom"] = env[ENV_FALLBACK].lower() in ("1", "true", "yes")
        kw.update(overrides)
        return cls(**kw)


def rewrite_blob(blob: bytes, matches: Iterable[Match],
                 shadows: Mapping[int, tuple[int, int]]) -> bytes:
    """Copy of ``blob`` with every matched window retargeted to its record's shadow.

    ``shadows`` maps record id to ``(host_base, shadow_base)``; interior
    offsets are preserved.  Windows overlapping an earlier rewrite are left alone.
    """
    out = bytearray(blob)
    done_until = -1
    for m in sorted(matches, key=lambda m: m.offset):
        pair = shadows.get(m.record_id)
        if pair is None or m.offset < done_until:
            continue
        base, shadow = pair
        struct.pack_into("<Q", out, m.offset, shadow + (m.value - base))
        done_until = m.offset + 8
    return bytes(out)


class Interposer:
    def __init__(self, config: InterposerConfig | None = None):
        self.config = config or InterposerConfig()
        model = self.config.model
        self.trace = Trace()
        self.host = HostMemory(model.page_size)
        self.sim = DeviceSim(model, self.host, self.trace)
        self.registry = Registry(model.page_size, on_unregister=self._released)
        self.table = RegistrationTable()
        self.engine = FaultEngine(self.registry, self.host, self.sim)
        # The device scheme never protects anything, so it runs without a handler.
        if self.config.scheme is SchemeKind.MIRROR:
            self.engine.install_handler()

    @property
    def scheme(self) -> SchemeKind:
        return self.config.scheme

    # -- code objects ----------------------------------------------------
    def load_code_object(self, image: bytes) -> list[str]:
        return self.table.add_code_object(image)

    def register_function(self, handle, name: str) -> None:
        self.table.register_kernel(handle, name)
        self.sim.register_function(handle, name)

    def module_load(self, image: bytes):
        return self.sim.module_load(self.table.add_code_object(image))

    def module_get_function(self, module, name: str):
        return self.sim.module_get_function(module, name)

    # -- allocation ------------------------------------------------------
    def managed_alloc(self, nbytes: int) -> int:
        if nbytes <= 0:
            raise InterposerError("managed allocation of zero bytes")
        scheme = self.scheme
        if scheme is SchemeKind.DEVICE:
            try:
                addr = self.sim.device_alloc(nbytes)
            except OutOfMemory:
                if not self.config.fallback_on_device_oom:
                    raise
                self.trace.emit("warning", nbytes=nbytes,
                                label="device allocation failed; degrading to mirror")
                return self._mirror_alloc(nbytes)
            rid = self.registry.register(addr, nbytes, AllocationKind.DEVICE, SchemeKind.DEVICE)
        elif scheme is SchemeKind.MIRROR:
            return self._mirror_alloc(nbytes)
        else:
            addr = self.sim.managed_alloc(nbytes)
            rid = self.registry.register(addr, nbytes, AllocationKind.MANAGED, scheme)
        rec = self.registry.get(rid)
        self.trace.emit("alloc", record_id=rid, nbytes=rec.len, label=scheme.value)
        if scheme is SchemeKind.ADVISE:
            self.sim.advise(addr, rec.len, record_id=rid)
        return addr

    def _mirror_alloc(self, nbytes: int) -> int:
        if not self.engine.installed:
            self.engine.install_handler()
        addr = self.host.mmap(nbytes, tag="mirror")
        rid = self.registry.register(addr, nbytes, AllocationKind.MANAGED, SchemeKind.MIRROR)
        self.trace.emit("alloc", record_id=rid, nbytes=self.registry.get(rid).len,
                        label=SchemeKind.MIRROR.value)
        return addr

    def free(self, addr: int) -> None:
        rec = self.registry.snapshot.record_at(addr)
        if rec is None or rec.base != addr:
            raise InterposerError(f"free of {addr:#x}, which is not a live managed allocation")
        claim = self.registry.claim(rec.id)
        with claim:
            self.registry.unregister(rec.id)

    def _released(self, rec: AllocationRecord) -> None:
        if rec.kind is AllocationKind.DEVICE:
            self.sim.device_free(rec.base)
        elif rec.scheme is SchemeKind.MIRROR:
            # Contents of a DeviceValid record are discarded, never written back.
            self.engine.release(rec.id, rec.base, rec.len)
            if rec.shadow is not None:
                self.sim.device_free(rec.shadow)
            self.host.munmap(rec.base)
        else:
            self.sim.managed_free(rec.base)
        self.trace.emit("free", record_id=rec.id, nbytes=rec.len)

    # -- launch ----------------------------------------------------------
    def launch(self, handle, arg_blob: bytes, geometry: LaunchGeometry | None = None) -> LaunchResult:
        desc = self._descriptor(handle)
        blob = bytes(arg_blob)
        t0 = self.trace.clock
        deps = resolve(blob, desc, self.registry.snapshot)
        ids = sorted(deps.ids)
        claims = [self.registry.claim(i) for i in ids]
        for c in claims:
            c.acquire()
        try:
            launch_blob = self._prepare(desc.mangled_name, deps, ids, blob)
            result = self.sim.launch(handle, launch_blob, geometry)
        finally:
            for c in reversed(claims):
                c.release()
        self.trace.emit("launch", nbytes=result.bytes_touched, label=result.name,
                        duration=self.trace.clock - t0)
        return result

    def _descriptor(self, handle):
        try:
            return self.table.resolve_descriptor(handle)
        except RegistrationError:
            if not isinstance(handle, int) or self.host.region(handle) is None:
                raise
        return self.table.resolve_raw(handle, self.sim._raw_read)

    def _prepare(self, name: str, deps: LaunchDependencies, ids: list[int], blob: bytes) -> bytes:
        snap = self.registry.snapshot
        recs = [snap.records[i] for i in ids]
        to_migrate = [r for r in recs if r.scheme is SchemeKind.MIRROR
                      and r.state is CoherenceState.HOST_VALID]
        shadows: list[int] = []
        try:
            for r in to_migrate:
                shadows.append(self.sim.device_alloc(r.len))
        except OutOfMemory:
            for s in shadows:
                self.sim.device_free(s)
            raise
        for r, shadow in zip(to_migrate, shadows):
            self.sim.copy(Direction.H2D, r.base, shadow, r.len, record_id=r.id, label=name)
            self.registry.transition(r.id, CoherenceState.DEVICE_VALID, shadow=shadow)
            self.engine.protect(r.id)
        for r in recs:
            if r.scheme is SchemeKind.ADVISE:
                self.sim.prefetch(r.base, r.len, "device", record_id=r.id)
        snap = self.registry.snapshot
        targets = {i: (snap.records[i].base, snap.records[i].shadow) for i in ids
                   if snap.records[i].scheme is SchemeKind.MIRROR}
        return rewrite_blob(blob, deps.matches, targets) if targets else blob

    # -- host side -------------------------------------------------------
    def view(self, addr: int, dtype, count: int, write: bool = False) -> np.ndarray:
        """Host access to application memory, faulting exactly as a CPU load/store would."""
        return self.host.view(addr, dtype, count, write)

    def shutdown(self) -> list[str]:
        """Free everything still live, uninstall the handler, write the trace; return audit problems."""
        for rec in list(self.registry):
            self.free(rec.base)
        problems = self.engine.audit()
        if self.engine.ledger:
            problems.append(f"{len(self.engine.ledger)} ledger entries leaked")
        if self.engine.installed:
            self.engine.uninstall_handler()
        if self.config.trace_path:
            emit_trace(self.trace.events, self.config.trace_path)
        return problems
