import numpy as np
import pytest

from upage.hostmem import (PROT_NONE, PROT_READ, PROT_RW, HostMemory, OutOfMemory,
                           RangeAllocator, SegmentationFault)


def test_mmap_is_page_aligned_and_zeroed():
    mem = HostMemory(4096)
    a = mem.mmap(10)
    b = mem.mmap(5000)
    assert a % 4096 == 0 and b % 4096 == 0
    assert b >= a + 4096
    assert mem.read(a, 10) == bytes(10)


def test_alignment_phase():
    mem = HostMemory(4096)
    for _ in range(4):
        a = mem.mmap(4096, align=1 << 21, phase=4096)
        assert a % (1 << 21) == 4096


def test_unprotected_access_round_trips():
    mem = HostMemory(4096)
    a = mem.mmap(64)
    mem.write(a, b"hello")
    assert mem.read(a, 5) == b"hello"


def test_unmapped_access_is_fatal_by_default():
    mem = HostMemory(4096)
    with pytest.raises(SegmentationFault):
        mem.read(0x1234, 8)


def test_protection_delivers_fault_with_address():
    mem = HostMemory(4096)
    a = mem.mmap(3 * 4096)
    mem.mprotect(a + 4096, 4096, PROT_NONE)
    seen = []

    def handler(addr):
        seen.append(addr)
        mem.mprotect(a + 4096, 4096, PROT_RW)

    mem.sigaction(handler)
    mem.read(a, 3 * 4096)
    assert seen == [a + 4096]


def test_read_only_page_faults_on_write_only():
    mem = HostMemory(4096)
    a = mem.mmap(4096)
    mem.mprotect(a, 4096, PROT_READ)
    mem.read(a, 8)
    with pytest.raises(SegmentationFault):
        mem.write(a, b"x")


def test_handler_that_never_fixes_the_fault_gives_up():
    mem = HostMemory(4096)
    a = mem.mmap(4096)
    mem.mprotect(a, 4096, PROT_NONE)
    calls = []
    mem.sigaction(calls.append)
    with pytest.raises(SegmentationFault):
        mem.read(a, 1)
    assert len(calls) == 64


def test_raw_alias_bypasses_protection():
    mem = HostMemory(4096)
    a = mem.mmap(4096)
    mem.write(a, b"abc")
    mem.mprotect(a, 4096, PROT_NONE)
    assert mem.raw(a, 3).tobytes() == b"abc"


def test_munmap_drops_protection():
    mem = HostMemory(4096)
    a = mem.mmap(4096)
    mem.mprotect(a, 4096, PROT_NONE)
    mem.munmap(a)
    assert not mem.protected_pages()


def test_view_is_typed():
    mem = HostMemory(4096)
    a = mem.mmap(64)
    mem.view(a, np.float64, 4, write=True)[:] = [1, 2, 3, 4]
    assert mem.view(a, np.float64, 4).tolist() == [1, 2, 3, 4]


def test_range_allocator_coalesces():
    ra = RangeAllocator(0, 1 << 20)
    blocks = [ra.alloc(4096, 4096) for _ in range(256)]
    with pytest.raises(OutOfMemory):
        ra.alloc(4096, 4096)
    for b in blocks[::2] + blocks[1::2]:
        ra.free(b)
    assert ra.live_bytes == 0
    assert ra.alloc(1 << 20, 4096) == 0
