"""Append-only event trace, JSON-lines persistence and CSV summaries."""
from __future__ import annotations

import csv
import io
import json
import threading
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator

KINDS = ("alloc", "free", "H2D", "D2H", "fault", "launch", "advise", "prefetch", "warning")


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    clock: float
    kind: str
    record_id: int | None = None
    bytes: int | None = None
    label: str = ""
    # Only launch events carry a duration: elapsed simulated time of the
    # whole intercepted launch, migrations included.
    duration: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        d = json.loads(line)
        return cls(**{f.name: d.get(f.name) for f in fields(cls)})


class Trace:
    """Thread-safe event sink that also owns the simulated clock.

    Advancing the clock and appending the event happen under one short lock
    so ``seq`` order and ``clock`` order always agree.  The lock is never held
    while user code (kernel bodies, fault handlers) runs.
    """

    def __init__(self) -> None:
        self.events: list[TraceEvent] = []
        self.clock = 0.0
        self._lock = threading.Lock()

    def advance(self, dt: float) -> float:
        if dt < 0:
            raise ValueError("clock cannot run backwards")
        with self._lock:
            self.clock += dt
            return self.clock

    def emit(self, kind: str, *, record_id: int | None = None, nbytes: int | None = None,
             label: str = "", advance: float = 0.0, duration: float | None = None) -> TraceEvent:
        if kind not in KINDS:
            raise ValueError(f"unknown trace event kind {kind!r}")
        if kind in ("H2D", "D2H") and not (nbytes and nbytes > 0):
            raise ValueError(f"{kind} events must carry a positive byte count")
        with self._lock:
            if advance:
                if advance < 0:
                    raise ValueError("clock cannot run backwards")
                self.clock += advance
            ev = TraceEvent(len(self.events), self.clock, kind, record_id, nbytes, label,
                            duration)
            self.events.append(ev)
        return ev

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(list(self.events))

    def count(self, kind: str, record_id: int | None = None) -> int:
        return sum(1 for e in self.events
                   if e.kind == kind and (record_id is None or e.record_id == record_id))

    def bytes(self, kind: str) -> int:
        return sum(e.bytes or 0 for e in self.events if e.kind == kind)


def emit_trace(events: Iterable[TraceEvent], path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8", newline="\n") as f:
            for ev in events:
                f.write(ev.to_json())
                f.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror}") from exc


def parse_trace(path_or_lines: str | Path | Iterable[str]) -> list[TraceEvent]:
    if isinstance(path_or_lines, (str, Path)):
        lines: Iterable[str] = Path(path_or_lines).read_text(encoding="utf-8").splitlines()
    else:
        lines = path_or_lines
    return [TraceEvent.from_json(line) for line in lines if line.strip()]


CSV_COLUMNS = ("scheme", "workload", "kernel", "bytes_h2d", "bytes_d2h", "faults",
               "eff_bw", "sim_time", "final_d2h_time")


def rows_to_csv(rows: Iterable[dict], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: row[k] for k in CSV_COLUMNS})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
