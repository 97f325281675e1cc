"""Demand write-back driven by host access faults.

A mirror record whose data lives on the device has its host pages mapped
no-access.  The first host touch faults; the handler copies the whole
allocation back from its device shadow through the DMA path, drops the
protection, releases the shadow and lets the access retry.

Concurrency: the first faulting thread takes the record's claim with a
non-blocking acquire and performs the migration.  Everyone else yields until
the pages are accessible again and then retries.  The handler never blocks on
a lock, so it cannot deadlock against a launch that holds the claim.
"""
from __future__ import annotations

import enum
import time
from dataclasses import dataclass

from .hostmem import PROT_NONE, PROT_RW, FaultHandler, HostMemory
from .registry import AllocationKind, CoherenceState, Registry, SchemeKind
from .sim.runtime import DeviceSim, Direction


class CoherenceError(RuntimeError):
    """Coherence can no longer be guaranteed; treat as fatal."""


class FaultOutcome(str, enum.Enum):
    MIGRATED = "migrated"
    NOT_OURS = "not_ours"


@dataclass
class LedgerEntry:
    protected: bool = False
    faults_served: int = 0


class FaultEngine:
    def __init__(self, registry: Registry, host: HostMemory, sim: DeviceSim):
        self.registry = registry
        self.host = host
        self.sim = sim
        self.ledger: dict[int, LedgerEntry] = {}
        self._previous: FaultHandler | None = None
        self.installed = False

    # -- protection ------------------------------------------------------
    def protect(self, rid: int) -> None:
        rec = self.registry.get(rid)
        if rec.kind is not AllocationKind.MANAGED or rec.scheme is not SchemeKind.MIRROR:
            raise CoherenceError(f"record {rid} ({rec.kind.value}/{rec.scheme.value}) "
                                 "is not a managed mirror allocation; refusing to protect")
        try:
            self.host.mprotect(rec.base, rec.len, PROT_NONE)
        except ValueError as exc:
            raise CoherenceError(f"cannot protect record {rid}: {exc}") from exc
        self.ledger.setdefault(rid, LedgerEntry()).protected = True

    def unprotect(self, rid: int) -> None:
        entry = self.ledger.get(rid)
        if entry is None or not entry.protected:
            return
        rec = self.registry.snapshot.records.get(rid)
        if rec is not None:
            self.host.mprotect(rec.base, rec.len, PROT_RW)
        entry.protected = False

    def release(self, rid: int, base: int, length: int) -> None:
        """Forget a record that is being freed, dropping any protection first."""
        entry = self.ledger.pop(rid, None)
        if entry is not None and entry.protected:
            self.host.mprotect(base, length, PROT_RW)

    # -- handler ---------------------------------------------------------
    def install_handler(self) -> None:
        if self.installed:
            raise RuntimeError("fault handler already installed")
        self._previous = self.host.sigaction(self._on_fault)
        self.installed = True

    def uninstall_handler(self) -> None:
        if not self.installed:
            raise RuntimeError("fault handler not installed")
        self.host.sigaction(self._previous)
        self._previous = None
        self.installed = False

    def _on_fault(self, addr: int) -> None:
        if self.handle_fault(addr) is FaultOutcome.NOT_OURS:
            self._previous(addr)

    def handle_fault(self, fault_addr: int) -> FaultOutcome:
        while True:
            rec = self.registry.snapshot.record_at(fault_addr)
            if rec is None:
                return FaultOutcome.NOT_OURS
            if not self.host.is_protected(fault_addr):
                # Another thread finished the write-back first.
                return FaultOutcome.MIGRATED
            claim = self.registry.claim(rec.id)
            if not claim.acquire(blocking=False):
                time.sleep(0)
                continue
            try:
                rec = self.registry.get(rec.id)
                if not self.host.is_protected(fault_addr):
                    return FaultOutcome.MIGRATED
                if rec.state is not CoherenceState.DEVICE_VALID:
                    raise CoherenceError(f"fault at {fault_addr:#x} inside record {rec.id} "
                                         f"in state {rec.state.value} with pages protected")
                self._write_back(rec)
                return FaultOutcome.MIGRATED
            finally:
                claim.release()

    def _write_back(self, rec) -> None:
        self.sim.trace.emit("fault", record_id=rec.id, label="writeback")
        self.sim.copy(Direction.D2H, rec.shadow, rec.base, rec.len, record_id=rec.id,
                      label="writeback")
        self.host.mprotect(rec.base, rec.len, PROT_RW)
        self.registry.transition(rec.id, CoherenceState.HOST_VALID, bump_generation=True)
        self.sim.device_free(rec.shadow)
        entry = self.ledger.setdefault(rec.id, LedgerEntry())
        entry.protected = False
        entry.faults_served += 1

    # -- audit -----------------------------------------------------------
    def audit(self) -> list[str]:
        """Cross-check ledger, registry and the page table; empty list means consistent."""
        problems = []
        page = self.host.page_size
        expected: set[int] = set()
        snap = self.registry.snapshot
        for rec in snap:
            entry = self.ledger.get(rec.id, LedgerEntry())
            device_valid = rec.state is CoherenceState.DEVICE_VALID
            if rec.kind is AllocationKind.MANAGED and device_valid:
                expected.update(range(rec.base // page, rec.end // page))
                if not entry.protected:
                    problems.append(f"record {rec.id} is DeviceValid but unprotected")
            elif entry.protected:
                problems.append(f"record {rec.id} is {rec.state.value} but protected")
            if entry.faults_served != rec.generation:
                problems.append(f"record {rec.id}: faults_served {entry.faults_served} "
                                f"!= generation {rec.generation}")
        for rid in self.ledger:
            if rid not in snap.records:
                problems.append(f"ledger entry for dead record {rid}")
        actual = set(self.host.protected_pages())
        if actual != expected:
            problems.append(f"protected pages differ from DeviceValid ranges: "
                            f"{len(actual - expected)} extra, {len(expected - actual)} missing")
        return problems
