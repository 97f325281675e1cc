import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upage.hostmem import OutOfMemory
from upage.sim import DeviceModel, DeviceSim, SimKernel
from upage.sim.model import GB
from upage.sim.runtime import SimulatorError, SimulatorIntegrityError

MI100 = DeviceModel.preset("mi100")


def _sim(model=MI100, **changes):
    return DeviceSim(model.with_(**changes) if changes else model)


def _touch(name, *spans, flops=0.0):
    """Kernel body reading each (addr, nbytes) span once."""
    def body(ctx):
        for addr, n in spans:
            ctx.view(addr, np.uint8, n)
        ctx.flops(flops)
    return SimKernel(name, body)


# -- cost model ------------------------------------------------------------

def test_one_gib_copy_cost():
    # 1 GiB over 31.5 GB/s (GB = 2**30) plus the fixed per-op latency.
    assert MI100.transfer_time(GB) == pytest.approx(1 / 31.5 + 1e-5, rel=1e-12)


def test_copy_advances_clock_by_transfer_time():
    sim = _sim()
    h = sim.host.mmap(1 << 20)
    d = sim.device_alloc(1 << 20)
    sim.copy("H2D", h, d, 1 << 20)
    assert sim.clock == pytest.approx(1e-5 + (1 << 20) / (31.5 * 2**30), rel=1e-12)
    assert sim.trace.events[-1].kind == "H2D" and sim.trace.events[-1].bytes == 1 << 20


def test_triad_launch_is_bytes_over_device_bandwidth():
    n = 1 << 20
    sim = _sim()
    a, b, c = (sim.device_alloc(8 * n) for _ in range(3))
    sim.register_kernel(_touch("triad", (a, 8 * n), (b, 8 * n), (c, 8 * n)))
    sim.register_function(1, "triad")
    res = sim.launch(1, b"")
    assert res.bytes_touched == 24 * n
    assert res.duration == pytest.approx(24 * n / (1228.8 * 2**30), rel=1e-12)
    assert sim.clock == pytest.approx(res.duration)


def test_kernel_without_buffers_costs_compute_only():
    sim = _sim()
    sim.register_kernel(_touch("spin", flops=23070e9))
    sim.register_function(1, "spin")
    res = sim.launch(1, b"")
    assert res.mem_time == 0 and res.bytes_touched == 0
    assert res.duration == pytest.approx(1.0)


def test_launch_latency_is_charged_separately():
    sim = _sim(launch_latency=5e-6)
    sim.register_kernel(_touch("nop"))
    sim.register_function(1, "nop")
    assert sim.launch(1, b"").duration == pytest.approx(5e-6)


def test_host_resident_managed_memory_streams_at_interconnect_rate():
    sim = _sim()
    m = sim.managed_alloc(1 << 20)
    sim.register_kernel(_touch("k", (m, 1 << 20)))
    sim.register_function(1, "k")
    assert sim.launch(1, b"").duration == pytest.approx((1 << 20) / (31.5 * 2**30))


# -- device memory ---------------------------------------------------------

def test_capacity_is_enforced():
    sim = _sim(capacity=1 << 20)
    sim.device_alloc(1 << 19)
    with pytest.raises(OutOfMemory):
        sim.device_alloc((1 << 19) + 1)


def test_zero_sized_device_alloc_rejected():
    with pytest.raises(ValueError):
        _sim().device_alloc(0)


def test_allocations_are_disjoint():
    sim = _sim()
    spans = sorted((a, a + n) for n in (1, 4096, 5000, 1 << 16) for a in [sim.device_alloc(n)])
    for (_, e), (b, _) in zip(spans, spans[1:]):
        assert e <= b


def test_churn_leaves_no_live_bytes():
    rng = random.Random(5)
    sim = _sim(capacity=1 << 26)
    live = []
    for _ in range(10_000):
        if live and rng.random() < 0.5:
            sim.device_free(live.pop(rng.randrange(len(live))))
        else:
            live.append(sim.device_alloc(rng.randint(1, 1 << 16)))
    for a in live:
        sim.device_free(a)
    assert sim.live_device_bytes == 0


def test_double_free_rejected():
    sim = _sim()
    a = sim.device_alloc(64)
    sim.device_free(a)
    with pytest.raises(SimulatorError):
        sim.device_free(a)


# -- transfers ---------------------------------------------------------------

def test_copy_round_trip():
    sim = _sim()
    data = np.random.default_rng(3).integers(0, 256, 10_000, dtype=np.uint8)
    h = sim.host.mmap(len(data))
    back = sim.host.mmap(len(data))
    sim.host.write(h, data.tobytes())
    d = sim.device_alloc(len(data))
    sim.copy("H2D", h, d, len(data))
    sim.copy("D2H", d, back, len(data))
    assert sim.host.read(back, len(data)) == data.tobytes()


def test_zero_length_and_out_of_range_copies_rejected():
    sim = _sim()
    h, d = sim.host.mmap(4096), sim.device_alloc(4096)
    with pytest.raises(SimulatorError):
        sim.copy("H2D", h, d, 0)
    with pytest.raises(SimulatorError):
        sim.copy("H2D", h, d, 8192)


def test_host_window_onto_device_memory_costs_interconnect_time():
    sim = _sim()
    d = sim.device_alloc(4096)
    sim.host.write(d, b"\x07" * 16)
    assert sim.host.read(d, 16) == b"\x07" * 16
    assert [e.label for e in sim.trace.events] == ["map", "map"]
    assert sim.clock == pytest.approx(32 / (31.5 * 2**30))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["H2D", "D2H"]), st.integers(0, 3)), max_size=30))
def test_resident_bytes_conservation(ops):
    # Whole-allocation copies: net bytes sent equals what sits on the device.
    sim = _sim()
    sizes = [4096, 8192, 3 * 4096, 4096]
    host = [sim.host.mmap(n) for n in sizes]
    dev = [sim.device_alloc(n) for n in sizes]
    on_device = [False] * 4
    for direction, i in ops:
        if direction == "H2D" and not on_device[i]:
            sim.copy("H2D", host[i], dev[i], sizes[i])
            on_device[i] = True
        elif direction == "D2H" and on_device[i]:
            sim.copy("D2H", dev[i], host[i], sizes[i])
            on_device[i] = False
    assert sim.trace.bytes("H2D") - sim.trace.bytes("D2H") == sim.resident_bytes()


# -- managed memory, advise and prefetch ---------------------------------------

def test_quirk_places_managed_memory_one_page_past_the_boundary():
    sim = _sim()
    a = sim.managed_alloc(1 << 20)
    assert a % (2 << 20) == 4096


def test_misaligned_advise_and_prefetch_are_warning_no_ops():
    sim = _sim()
    a = sim.managed_alloc(1 << 20)
    assert sim.advise(a, 1 << 20) is False
    assert sim.prefetch(a, 1 << 20) is False
    assert [e.kind for e in sim.trace.events] == ["warning", "warning"]
    assert not sim.is_device_resident(a)
    assert sim.clock == 0


def test_prefetch_migrates_and_host_touch_migrates_back():
    sim = _sim(advise_alignment_quirk=False)
    a = sim.managed_alloc(8192)
    sim.host.write(a, b"\x01" * 8192)
    assert sim.advise(a, 8192) is True
    assert sim.prefetch(a, 8192) is True
    assert sim.is_device_resident(a)
    assert sim.prefetch(a, 8192) is True  # already there: no traffic
    assert sim.trace.count("H2D") == 1
    sim.register_kernel(SimKernel("dbl", lambda ctx: ctx.view(a, np.uint8, 8192).__imul__(2)))
    sim.register_function(1, "dbl")
    assert sim.launch(1, b"").duration == pytest.approx(8192 / (1228.8 * 2**30))
    assert sim.host.read(a, 4) == b"\x02" * 4
    assert sim.trace.count("D2H") == 1 and not sim.is_device_resident(a)


def test_prefetch_to_host_returns_device_contents():
    sim = _sim(advise_alignment_quirk=False)
    a = sim.managed_alloc(4096)
    sim.prefetch(a, 4096)
    sim._dev[sim._managed[a].twin][:4] = 9
    sim.prefetch(a, 4096, "host")
    assert sim.host.raw(a, 4).tobytes() == b"\x09" * 4
    assert [e.label for e in sim.trace.events if e.kind == "D2H"] == ["prefetch"]


def test_advise_on_unmanaged_memory_is_an_error():
    sim = _sim()
    with pytest.raises(SimulatorError):
        sim.advise(sim.host.mmap(4096), 4096)
    with pytest.raises(ValueError):
        sim.prefetch(sim.managed_alloc(4096), 4096, "elsewhere")


# -- integrity ------------------------------------------------------------------

def test_kernel_touching_plain_host_memory_is_an_integrity_error():
    sim = _sim()
    plain = sim.host.mmap(4096)
    sim.register_kernel(_touch("bad", (plain, 8)))
    sim.register_function(1, "bad")
    with pytest.raises(SimulatorIntegrityError, match="non-managed"):
        sim.launch(1, b"")


def test_kernel_touching_protected_page_is_an_integrity_error():
    sim = _sim()
    a = sim.managed_alloc(8192)
    sim.host.mprotect(a + 4096, 4096, 0)
    sim.register_kernel(_touch("bad", (a, 8192)))
    sim.register_function(1, "bad")
    with pytest.raises(SimulatorIntegrityError, match="protected"):
        sim.launch(1, b"")


def test_unknown_handle_rejected():
    with pytest.raises(SimulatorError):
        _sim().launch(0xDEAD, b"")


# -- determinism and presets ----------------------------------------------------

def _scripted_run():
    sim = _sim()
    h, d = sim.host.mmap(1 << 16), sim.device_alloc(1 << 16)
    sim.register_kernel(_touch("k", (d, 1 << 16), flops=1e6))
    sim.register_function(1, "k")
    for _ in range(5):
        sim.copy("H2D", h, d, 1 << 16)
        sim.launch(1, b"")
        sim.copy("D2H", d, h, 1 << 16)
    return [e.to_json() for e in sim.trace.events], sim.clock


def test_runs_are_deterministic():
    assert _scripted_run() == _scripted_run()


@pytest.mark.parametrize("name", ["mi100", "radeonvii", "raphael"])
def test_presets_load(name):
    m = DeviceModel.preset(name)
    assert m.page_size == 4096 and m.device_bw > 0 and math.isfinite(m.interconnect_bw)
    assert DeviceModel.resolve(f"presets/{name}.toml") == m


def test_model_rejects_unknown_keys(tmp_path):
    p = tmp_path / "m.toml"
    p.write_text('name = "x"\ndevice_bw = 10.0\nturbo = true\n')
    with pytest.raises(ValueError, match="turbo"):
        DeviceModel.load(p)


@pytest.mark.parametrize("bad", [dict(device_bw=0), dict(page_size=3000),
                                 dict(per_op_latency=-1), dict(capacity=0)])
def test_model_validates_fields(bad):
    with pytest.raises(ValueError):
        DeviceModel(**bad)


def test_unknown_preset_and_missing_file():
    with pytest.raises(ValueError):
        DeviceModel.preset("h100")
    with pytest.raises(FileNotFoundError):
        DeviceModel.resolve("/nonexistent/model.toml")
