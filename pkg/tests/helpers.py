"""Small kernels and an interposer harness shared by the tests."""
from __future__ import annotations

import logging
import struct
import threading

import numpy as np

from upage.interposer import Interposer, InterposerConfig
from upage.sim.model import DeviceModel
from upage.sim.runtime import SimKernel
from upage.workloads.base import capture, descriptor, pack, ptr

INC = "_Z3incPdm"        # (double* x, size_t n): x[i] += 1
SCALE = "_Z5scalePdS_m"  # (double* dst, const double* src, size_t n): dst = 2 * src
CAPINC = "_ZZ3capvENKUlvE_clEv"  # closure capturing x and n, same effect as INC
NOP = "_Z3nopm"          # (size_t): touches nothing

KERNELS = [
    descriptor(INC, ("ptr", 8), ("val", 8)),
    descriptor(SCALE, ("ptr", 8), ("ptr", 8), ("val", 8)),
    descriptor(CAPINC, ("val", 2 + 8 + 8)),
    descriptor(NOP, ("val", 8)),
]
DESC = {k.mangled_name: k for k in KERNELS}


def _inc(ctx):
    n = ctx.u64(8)
    ctx.view(ctx.u64(0), np.float64, n)[:] += 1.0


def _scale(ctx):
    n = ctx.u64(16)
    np.multiply(ctx.view(ctx.u64(8), np.float64, n), 2.0, out=ctx.view(ctx.u64(0), np.float64, n))


def _capinc(ctx):
    n = ctx.u64(10)
    ctx.view(ctx.u64(2), np.float64, n)[:] += 1.0


def _nop(ctx):
    pass


BODIES = {INC: _inc, SCALE: _scale, CAPINC: _capinc, NOP: _nop}


class Harness:
    """An interposer with the toy kernels registered under static handles."""

    def __init__(self, scheme="mirror", model: DeviceModel | None = None, **cfg):
        from upage.codeobj import emit_code_object
        self.ip = Interposer(InterposerConfig(scheme, model or DeviceModel.preset("mi100"), **cfg))
        for name, body in BODIES.items():
            self.ip.sim.register_kernel(SimKernel(name, body))
        self.ip.load_code_object(emit_code_object(KERNELS))
        self.handles = {}
        for i, k in enumerate(KERNELS):
            self.handles[k.mangled_name] = 0x1000 + 16 * i
            self.ip.register_function(0x1000 + 16 * i, k.mangled_name)

    @property
    def trace(self):
        return self.ip.trace

    def alloc(self, n: int, fill: float = 0.0) -> int:
        addr = self.ip.managed_alloc(8 * n)
        self.ip.view(addr, np.float64, n, write=True)[:] = fill
        return addr

    def read(self, addr: int, n: int) -> np.ndarray:
        return self.ip.view(addr, np.float64, n).copy()

    def inc(self, addr: int, n: int):
        return self.ip.launch(self.handles[INC], pack(DESC[INC], ptr(addr), struct.pack("<Q", n)))

    def capinc(self, addr: int, n: int):
        return self.ip.launch(self.handles[CAPINC], pack(DESC[CAPINC], capture(("Q", addr), ("Q", n))))

    def scale(self, dst: int, src: int, n: int):
        return self.ip.launch(self.handles[SCALE],
                              pack(DESC[SCALE], ptr(dst), ptr(src), struct.pack("<Q", n)))

    def nop(self):
        return self.ip.launch(self.handles[NOP], pack(DESC[NOP], struct.pack("<Q", 7)))

    def count(self, kind, rid=None):
        return self.trace.count(kind, rid)


def soak(rounds: int, threads: int = 8, n: int = 8192):
    """Race ``threads`` readers against one DeviceValid record for ``rounds`` rounds.

    Returns (d2h_events, torn_reads, deadlocked, shutdown_problems).
    """
    h = Harness()
    addr = h.alloc(n, 0.0)
    rid = h.ip.registry.lookup(addr)
    go = threading.Barrier(threads + 1, timeout=30)
    done = threading.Barrier(threads + 1, timeout=30)
    torn = []
    stop = False

    def reader():
        while True:
            go.wait()
            if stop:
                return
            v = h.ip.view(addr, np.float64, n)
            expected = v[0]
            if not (v == expected).all():
                torn.append(expected)
            done.wait()

    workers = [threading.Thread(target=reader, daemon=True) for _ in range(threads)]
    for w in workers:
        w.start()
    deadlocked = False
    try:
        for r in range(rounds):
            h.inc(addr, n)
            go.wait()
            done.wait()
            if h.ip.host.raw(addr, 8).view(np.float64)[0] != r + 1:
                torn.append(("value", r))
        stop = True
        go.wait()
    except threading.BrokenBarrierError:
        deadlocked = True
    for w in workers:
        w.join(5)
    d2h = h.count("D2H", rid)
    problems = h.ip.shutdown()
    return d2h, len(torn), deadlocked, problems


# -- resolver oracle ----------------------------------------------------------

def brute_force_resolve(blob: bytes, desc, live: dict[int, tuple[int, int]]) -> set[int]:
    """Every byte offset at stride 1, keeping only even offsets within by-value args."""
    from upage.codeobj import ValueKind

    def owner(v):
        for rid, (b, n) in live.items():
            if b <= v < b + n:
                return rid
        return None

    hits = set()
    for a in desc.args:
        if a.value_kind is ValueKind.GLOBAL_BUFFER_ADDRESS:
            positions = [a.offset]
        elif a.value_kind is ValueKind.BY_VALUE:
            positions = [p for p in range(a.offset, a.end - 7) if (p - a.offset) % 2 == 0]
        else:
            continue
        for p in positions:
            rid = owner(int.from_bytes(blob[p:p + 8], "little"))
            if rid is not None:
                hits.add(rid)
    return hits


def random_registry(rng, count: int = 12):
    """A registry with ``count`` records scattered above the host arena base."""
    from upage.registry import Registry
    reg = Registry(4096)
    live = {}
    page = 0x5500_0000_0000 // 4096
    for _ in range(count):
        page += rng.randint(1, 40)
        npages = rng.randint(1, 16)
        rid = reg.register(page * 4096, npages * 4096, "managed", "mirror")
        live[rid] = (page * 4096, npages * 4096)
        page += npages
    return reg, live


def random_blob(rng, desc, live, *, plant: int = 3, odd: bool | None = None) -> bytes:
    """Random bytes with record addresses planted at random (or forced-parity) offsets."""
    blob = bytearray(rng.getrandbits(8) for _ in range(desc.kernarg_size))
    for _ in range(plant):
        base, n = live[rng.choice(sorted(live))]
        value = base + rng.randrange(n + 1)  # may be one-past-end on purpose
        pos = rng.randrange(0, len(blob) - 7)
        if odd is not None:
            pos = pos | 1 if odd else pos & ~1
            if pos + 8 > len(blob):
                pos -= 2
        blob[pos:pos + 8] = value.to_bytes(8, "little")
    return bytes(blob)


def scanner_equivalence(blobs: int, odd_misses: int, seed: int = 99):
    """(mismatches, odd_cases, odd_failures) over random blobs plus adversarial odd plants."""
    import random
    from upage.codeobj import ArgField, KernelDescriptor, ValueKind
    from upage.resolver import resolve
    GBA, BV, HID = (ValueKind.GLOBAL_BUFFER_ADDRESS, ValueKind.BY_VALUE, ValueKind.HIDDEN)
    rng = random.Random(seed)
    reg, live = random_registry(rng)
    descs = [KernelDescriptor("k", (ArgField(0, 8, GBA), ArgField(8, 8, GBA),
                                    ArgField(16, 40, BV), ArgField(56, 8, HID)), 64),
             KernelDescriptor("c", (ArgField(0, 58, BV),), 64),
             KernelDescriptor("m", (ArgField(0, 4, BV), ArgField(8, 8, GBA),
                                    ArgField(16, 13, BV), ArgField(32, 32, BV)), 64)]
    mismatches = 0
    for i in range(blobs):
        desc = descs[i % len(descs)]
        blob = random_blob(rng, desc, live, plant=rng.randint(0, 4))
        if resolve(blob, desc, reg).ids != brute_force_resolve(blob, desc, live):
            mismatches += 1
    odd_fail = 0
    desc = descs[1]
    for _ in range(odd_misses):
        blob = bytearray(desc.kernarg_size)
        base, n = live[rng.choice(sorted(live))]
        pos = rng.randrange(1, 50, 2)
        blob[pos:pos + 8] = (base + rng.randrange(n)).to_bytes(8, "little")
        if resolve(bytes(blob), desc, reg).ids:
            odd_fail += 1
    return mismatches, odd_misses, odd_fail


# -- code-object fuzzing --------------------------------------------------------

def _kinds():
    from upage.codeobj import ValueKind
    return ValueKind.GLOBAL_BUFFER_ADDRESS, ValueKind.BY_VALUE, ValueKind.HIDDEN


def _triad():
    from upage.codeobj import ArgField, KernelDescriptor
    gba, bv, _ = _kinds()
    return KernelDescriptor("stream_triad", (ArgField(0, 8, gba), ArgField(8, 8, gba),
                                             ArgField(16, 8, gba), ArgField(24, 8, bv)), 32)


TRIAD_DESC = _triad()


def random_descriptor_set(rng: random.Random, max_kernels: int = 4) -> dict:
    from upage.codeobj import ArgField, KernelDescriptor
    GBA, BV, HID = _kinds()
    out = {}
    for k in range(rng.randint(1, max_kernels)):
        args, off = [], 0
        for _ in range(rng.randint(0, 8)):
            off += rng.choice((0, 0, 2, 4, 8))
            kind = rng.choice((GBA, GBA, BV, HID))
            size = 8 if kind is GBA else rng.choice((1, 2, 4, 8, 12, 24, 40))
            args.append(ArgField(off, size, kind))
            off += size
        name = "_Z%dk%d%sv" % (len(str(k)) + 1, k, "".join(rng.choice("abcxyz") for _ in range(3)))
        out[name] = KernelDescriptor(name, tuple(args), off + rng.choice((0, 0, 8, 56)))
    return out


def _mutate(rng: random.Random, img: bytes) -> bytes:
    b = bytearray(img)
    op = rng.randrange(6)
    if op == 0:
        for _ in range(rng.randint(1, 8)):
            i = rng.randrange(len(b))
            b[i] ^= 1 << rng.randrange(8)
    elif op == 1:
        for _ in range(rng.randint(1, 4)):
            b[rng.randrange(len(b))] = rng.choice((0x00, 0xFF, 0x7F, 0x80, 0xDC, 0xDD, 0xDE, 0xDF))
    elif op == 2:
        del b[rng.randrange(len(b)):]
    elif op == 3:
        i = rng.randrange(len(b))
        b[i:i] = bytes(rng.randrange(256) for _ in range(rng.randint(1, 16)))
    elif op == 4:
        # Overwrite a 4- or 8-byte field with an extreme integer (sizes, offsets, counts).
        i = rng.randrange(len(b) - 8)
        fmt = rng.choice(("<I", "<Q"))
        b[i:i + struct.calcsize(fmt)] = struct.pack(fmt, rng.choice((0, 1, 2**31, 2**32 - 1)
                                                                     if fmt == "<I" else
                                                                     (0, 2**63, 2**64 - 1)))
    else:
        i, j = sorted(rng.randrange(len(b)) for _ in range(2))
        del b[i:j]
    return bytes(b)


def fuzz(cases: int, seed: int = 2024) -> tuple[int, int, list]:
    """Returns (accepted, rejected, crashes)."""
    import random
    from upage.codeobj import CodeObjectError, emit_code_object, parse_code_object
    rng = random.Random(seed)
    corpus = [emit_code_object(random_descriptor_set(rng).values()) for _ in range(16)]
    corpus.append(emit_code_object([TRIAD_DESC]))
    accepted = rejected = 0
    crashes = []
    # Mutated value-kind strings are expected; keep their warnings out of the log.
    log = logging.getLogger("upage.codeobj")
    level = log.level
    log.setLevel(logging.ERROR)
    try:
        for _ in range(cases):
            img = _mutate(rng, rng.choice(corpus))
            try:
                parse_code_object(img)
                accepted += 1
            except CodeObjectError:
                rejected += 1
            except Exception as exc:  # anything else is a parser bug
                crashes.append((img, repr(exc)))
    finally:
        log.setLevel(level)
    return accepted, rejected, crashes
