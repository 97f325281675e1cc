import random
import struct

import pytest
from helpers import random_registry, scanner_equivalence

from upage import kernels
from upage.codeobj import ArgField, KernelDescriptor, ValueKind
from upage.registry import Registry
from upage.resolver import ResolutionError, resolve

GBA, BV, HID = ValueKind.GLOBAL_BUFFER_ADDRESS, ValueKind.BY_VALUE, ValueKind.HIDDEN
BASE = 0x5500_0001_0000


def _reg():
    reg = Registry(4096)
    r1 = reg.register(BASE, 4 * 4096, "managed", "mirror")
    r2 = reg.register(BASE + 0x10000, 4096, "managed", "mirror")
    return reg, r1, r2


def test_direct_argument():
    reg, r1, _ = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 8, GBA),), 8)
    deps = resolve(struct.pack("<Q", BASE), desc, reg)
    assert deps.ids == {r1} and deps.direct_hits == 1 and deps.scanned_hits == 0


def test_capture_scan_finds_even_offset_interior_address():
    reg, _, r2 = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 24, BV),), 24)
    blob = bytearray(24)
    struct.pack_into("<Q", blob, 6, BASE + 0x10000 + 100)
    deps = resolve(bytes(blob), desc, reg)
    assert deps.ids == {r2} and deps.scanned_hits == 1
    assert [m.offset for m in deps.matches] == [6]


def test_capture_scan_misses_odd_offset():
    reg, _, _ = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 24, BV),), 24)
    blob = bytearray(24)
    struct.pack_into("<Q", blob, 7, BASE + 0x10000)
    assert resolve(bytes(blob), desc, reg).ids == frozenset()


def test_one_past_end_does_not_match():
    reg, r1, _ = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 8, GBA), ArgField(8, 8, BV)), 16)
    end = BASE + 4 * 4096
    assert resolve(struct.pack("<QQ", end, end), desc, reg).ids == frozenset()
    assert resolve(struct.pack("<QQ", end - 1, 0), desc, reg).ids == {r1}


def test_hidden_arguments_are_ignored():
    reg, _, _ = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 8, HID),), 8)
    assert resolve(struct.pack("<Q", BASE), desc, reg).ids == frozenset()


def test_only_first_level_is_followed():
    reg, r1, r2 = _reg()
    # r1's contents point at r2, but only the blob is inspected.
    desc = KernelDescriptor("k", (ArgField(0, 8, GBA),), 8)
    assert resolve(struct.pack("<Q", BASE), desc, reg).ids == {r1}


def test_short_blob_rejected():
    reg, _, _ = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 8, GBA), ArgField(8, 16, BV)), 24)
    with pytest.raises(ResolutionError):
        resolve(bytes(20), desc, reg)


def test_duplicates_collapse():
    reg, r1, _ = _reg()
    desc = KernelDescriptor("k", (ArgField(0, 8, GBA), ArgField(8, 8, GBA), ArgField(16, 16, BV)), 32)
    blob = struct.pack("<QQQQ", BASE, BASE + 8, BASE + 16, 0)
    deps = resolve(blob, desc, reg)
    assert deps.ids == {r1}
    assert deps.direct_hits + deps.scanned_hits >= len(deps.ids)


def test_scanner_equivalence_small():
    assert scanner_equivalence(1000, 100, seed=5) == (0, 100, 0)


def test_backends_agree_on_windows():
    rng = random.Random(3)
    reg, live = random_registry(rng, 30)
    bases, ends = reg.snapshot.arrays()
    impls = kernels.backends()
    for _ in range(300):
        blob = bytes(rng.getrandbits(8) for _ in range(rng.randint(8, 200)))
        blob = bytearray(blob)
        for _ in range(3):
            base, n = live[rng.choice(sorted(live))]
            p = rng.randrange(len(blob) - 7)
            blob[p:p + 8] = (base + rng.randrange(n)).to_bytes(8, "little")
        stop = len(blob) - 8
        results = {k: m.scan_windows(bytes(blob), 0, stop, 2, bases, ends) for k, m in impls.items()}
        assert len(set(map(repr, results.values()))) == 1
