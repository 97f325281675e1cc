"""Run workloads through the interposer and turn traces into reports.

Timing conventions, all in simulated seconds:

* A kernel's effective bandwidth is its bytes touched over its launch time,
  excluding that kernel's first launch (the warm-up, which pays for migration).
* ``sim_time`` spans from the start of the first launch of an already-seen
  kernel (the second iteration) to the end of the last launch.
* ``final_d2h_time`` is everything after the last launch: the host reading
  results back.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .interposer import Interposer, InterposerConfig
from .registry import SchemeKind
from .sim.model import GB, DeviceModel
from .trace import TraceEvent, emit_trace
from .workloads import cg, dock, hydro, stream
from .workloads.base import App, WorkloadSpec, checksum

MODULES = {"stream": stream, "cg": cg, "hydro": hydro, "dock": dock}
SCHEMES = tuple(s.value for s in SchemeKind)
TOTAL = "*"


class CoherenceFailure(RuntimeError):
    pass


@dataclass
class KernelStats:
    name: str
    launches: int = 0
    bytes_h2d: int = 0
    bytes_d2h: int = 0
    faults: int = 0
    steady_bytes: int = 0
    steady_time: float = 0.0

    @property
    def eff_bw(self) -> float:
        """GB/s over steady-state launches; 0 when a kernel ran only once."""
        return self.steady_bytes / self.steady_time / GB if self.steady_time > 0 else 0.0


@dataclass
class Report:
    workload: str
    scheme: str
    kernels: dict[str, KernelStats] = field(default_factory=dict)
    bytes_h2d: int = 0
    bytes_d2h: int = 0
    h2d_events: int = 0
    d2h_events: int = 0
    faults: int = 0
    warnings: int = 0
    sim_time: float = 0.0
    final_d2h_time: float = 0.0
    checksum: str | None = None
    oracle_checksum: str | None = None
    problems: list[str] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.problems and self.checksum == self.oracle_checksum

    def eff_bw(self, kernel: str) -> float:
        return self.kernels[kernel].eff_bw


def report_from_trace(events: Sequence[TraceEvent], *, workload: str, scheme: str) -> Report:
    """Everything in a report except the checksums, computed from the trace alone."""
    rep = Report(workload, scheme)
    launches = [e for e in events if e.kind == "launch"]
    # Launches run one at a time and are logged when they finish, so a
    # transfer belongs to the next launch event if it happened after that
    # launch started.
    pending: list[TraceEvent] = []
    for e in events:
        if e.kind == "H2D":
            rep.bytes_h2d += e.bytes
            rep.h2d_events += 1
        elif e.kind == "D2H":
            rep.bytes_d2h += e.bytes
            rep.d2h_events += 1
        elif e.kind == "fault":
            rep.faults += 1
        elif e.kind == "warning":
            rep.warnings += 1
        if e.kind in ("H2D", "D2H", "fault"):
            pending.append(e)
        elif e.kind == "launch":
            k = rep.kernels.setdefault(e.label, KernelStats(e.label))
            start = e.clock - e.duration
            for t in pending:
                if t.clock <= start:
                    continue
                if t.kind == "H2D":
                    k.bytes_h2d += t.bytes
                elif t.kind == "D2H":
                    k.bytes_d2h += t.bytes
                else:
                    k.faults += 1
            pending.clear()
    seen: set[str] = set()
    start = None
    for e in launches:
        k = rep.kernels.setdefault(e.label, KernelStats(e.label))
        k.launches += 1
        if e.label in seen:
            if start is None:
                start = e.clock - e.duration
            k.steady_bytes += e.bytes or 0
            k.steady_time += e.duration
        seen.add(e.label)
    if launches:
        if start is None:
            start = launches[0].clock - launches[0].duration
        rep.sim_time = launches[-1].clock - start
        rep.final_d2h_time = events[-1].clock - launches[-1].clock
    return rep


def summarize(report: Report) -> list[dict]:
    """CSV rows: one per kernel plus a ``*`` row for the whole run."""
    rows = []
    for name in sorted(report.kernels):
        k = report.kernels[name]
        rows.append({"scheme": report.scheme, "workload": report.workload, "kernel": name,
                     "bytes_h2d": k.bytes_h2d, "bytes_d2h": k.bytes_d2h, "faults": k.faults,
                     "eff_bw": repr(k.eff_bw), "sim_time": repr(k.steady_time),
                     "final_d2h_time": ""})
    if report.kernels:
        steady_b = sum(k.steady_bytes for k in report.kernels.values())
        steady_t = sum(k.steady_time for k in report.kernels.values())
        rows.append({"scheme": report.scheme, "workload": report.workload, "kernel": TOTAL,
                     "bytes_h2d": report.bytes_h2d, "bytes_d2h": report.bytes_d2h,
                     "faults": report.faults,
                     "eff_bw": repr(steady_b / steady_t / GB if steady_t > 0 else 0.0),
                     "sim_time": repr(report.sim_time),
                     "final_d2h_time": repr(report.final_d2h_time)})
    return rows


@functools.lru_cache(maxsize=64)
def oracle_checksum(spec: WorkloadSpec) -> str:
    return checksum(MODULES[spec.name].oracle(spec))


def run_workload(spec: WorkloadSpec, scheme: SchemeKind | str, model: DeviceModel, *,
                 trace_path=None, fallback_on_device_oom: bool = False,
                 keep: bool = False) -> Report:
    """Execute ``spec`` under ``scheme``; the report's ``valid`` compares against the host oracle.

    With ``keep`` the interposer is attached as ``report.interposer`` for inspection.
    """
    scheme = SchemeKind(scheme)
    mod = MODULES[spec.name]
    ip = Interposer(InterposerConfig(scheme, model, None, fallback_on_device_oom))
    app = App(ip, mod.kernels(spec), mod.bodies(spec), dynamic=mod.DYNAMIC)
    buffers = mod.run(app, spec)
    problems = ip.shutdown()
    if trace_path is not None:
        emit_trace(ip.trace.events, trace_path)
    rep = report_from_trace(ip.trace.events, workload=spec.name, scheme=scheme.value)
    rep.problems = problems
    rep.checksum = checksum(buffers)
    rep.oracle_checksum = oracle_checksum(spec)
    if rep.checksum != rep.oracle_checksum:
        mism = [k for k, v in MODULES[spec.name].oracle(spec).items()
                if v.tobytes() != buffers[k].tobytes()]
        rep.problems.append(f"checksum mismatch against host oracle in buffers: {', '.join(mism)}")
    if keep:
        rep.interposer = ip  # type: ignore[attr-defined]
    return rep


@dataclass
class Comparison:
    workload: str
    model: str
    reports: dict[str, Report]

    def normalized(self) -> dict[str, float]:
        ref = self.reports[SchemeKind.DEVICE.value].sim_time
        return {s: r.sim_time / ref for s, r in self.reports.items()}

    def rows(self) -> list[dict]:
        norm = self.normalized()
        return [{"scheme": s, "sim_time": r.sim_time, "normalized": norm[s],
                 "bytes_h2d": r.bytes_h2d, "bytes_d2h": r.bytes_d2h, "faults": r.faults}
                for s, r in self.reports.items()]


def compare_schemes(spec: WorkloadSpec, model: DeviceModel,
                    schemes: Iterable[str] = SCHEMES) -> Comparison:
    reports = {}
    for s in schemes:
        rep = run_workload(spec, s, model)
        if not rep.valid:
            raise CoherenceFailure(f"{spec.name} under {s}: " + "; ".join(rep.problems))
        reports[SchemeKind(s).value] = rep
    if SchemeKind.DEVICE.value not in reports:
        reports[SchemeKind.DEVICE.value] = run_workload(spec, SchemeKind.DEVICE, model)
    return Comparison(spec.name, model.name, reports)
