"""Compressible-hydro style time stepping with a periodic host-side field summary.

Every ``cadence`` steps the host reads density, energy and pressure to print
a summary, so each of those buffers is written back once per summary.
"""
from __future__ import annotations

import numpy as np

from .base import App, WorkloadSpec, capture, descriptor, ptr

DYNAMIC = False
GAMMA = 1.4
DT = 0.01

IDEAL_GAS = "_Z16ideal_gas_kernelPKdS0_PdS1_"
ACCELERATE = "_ZZ10accelerateR5ChunkdENKUlvE_clEv"
ADVECT = "_ZZ6advectR5ChunkdENKUlvE_clEv"

_ACC_CAP = 2 + 8 * 4 + 8 + 4
_ADV_CAP = 2 + 8 * 4 + 8 + 4


def do_ideal_gas(density, energy, pressure, soundspeed):
    pressure[:] = (GAMMA - 1.0) * density * energy
    soundspeed[:] = np.sqrt(GAMMA * pressure / density)


def do_accelerate(density, pressure, xvel, yvel, dt):
    xvel -= dt * (np.roll(pressure, -1, axis=1) - pressure) / density
    yvel -= dt * (np.roll(pressure, -1, axis=0) - pressure) / density


def do_advect(density, energy, xvel, yvel, dt):
    # First-order donor-cell fluxes with periodic boundaries, x sweep then y.
    for vel, axis in ((xvel, 1), (yvel, 0)):
        upwind_rho = np.where(vel > 0, density, np.roll(density, -1, axis=axis))
        upwind_e = np.where(vel > 0, energy, np.roll(energy, -1, axis=axis))
        mass = dt * vel * upwind_rho
        ie = mass * upwind_e
        new_rho = density - (mass - np.roll(mass, 1, axis=axis))
        energy[:] = (density * energy - (ie - np.roll(ie, 1, axis=axis))) / new_rho
        density[:] = new_rho


def summary(density, energy, pressure) -> np.ndarray:
    return np.array([density.sum(), (density * energy).sum(), pressure.sum()])


def kernels(spec: WorkloadSpec):
    return [descriptor(IDEAL_GAS, ("ptr", 8), ("ptr", 8), ("ptr", 8), ("ptr", 8)),
            descriptor(ACCELERATE, ("val", _ACC_CAP)),
            descriptor(ADVECT, ("val", _ADV_CAP))]


def bodies(spec: WorkloadSpec):
    n = spec.size
    f8 = np.float64

    def field(ctx, off):
        return ctx.view(ctx.u64(off), f8, n * n).reshape(n, n)

    def ideal_gas(ctx):
        do_ideal_gas(*(field(ctx, o) for o in (0, 8, 16, 24)))

    def accelerate(ctx):
        do_accelerate(*(field(ctx, o) for o in (2, 10, 18, 26)), ctx.f64(34))

    def advect(ctx):
        do_advect(*(field(ctx, o) for o in (2, 10, 18, 26)), ctx.f64(34))

    return {IDEAL_GAS: ideal_gas, ACCELERATE: accelerate, ADVECT: advect}


def _initial(spec: WorkloadSpec):
    n = spec.size
    rng = np.random.default_rng(spec.seed)
    density = np.full((n, n), 0.2)
    energy = np.full((n, n), 1.0)
    q = max(n // 4, 1)
    density[:q, :q] = 1.0
    energy[:q, :q] = 2.5
    density *= 1.0 + 1e-3 * rng.standard_normal((n, n))
    zeros = lambda: np.zeros((n, n))
    return {"density": density, "energy": energy, "pressure": zeros(),
            "soundspeed": zeros(), "xvel": zeros(), "yvel": zeros()}


def run(app: App, spec: WorkloadSpec) -> dict[str, np.ndarray]:
    n = spec.size
    addr = {k: app.alloc(v) for k, v in _initial(spec).items()}
    d, e, p, cs, u, v = (addr[k] for k in ("density", "energy", "pressure",
                                            "soundspeed", "xvel", "yvel"))
    summaries = []
    for step in range(1, spec.iterations + 1):
        app.launch(IDEAL_GAS, ptr(d), ptr(e), ptr(p), ptr(cs))
        app.launch(ACCELERATE, capture(("Q", d), ("Q", p), ("Q", u), ("Q", v), ("d", DT),
                                       ("i", n)))
        app.launch(ADVECT, capture(("Q", d), ("Q", e), ("Q", u), ("Q", v), ("d", DT),
                                   ("i", n)))
        if step % spec.cadence == 0:
            summaries.append(summary(app.read(d, np.float64, n * n),
                                     app.read(e, np.float64, n * n),
                                     app.read(p, np.float64, n * n)))
    out = {k: app.read(a, np.float64, n * n) for k, a in addr.items()}
    out["summary"] = np.array(summaries)
    return out


def oracle(spec: WorkloadSpec) -> dict[str, np.ndarray]:
    f = _initial(spec)
    summaries = []
    for step in range(1, spec.iterations + 1):
        do_ideal_gas(f["density"], f["energy"], f["pressure"], f["soundspeed"])
        do_accelerate(f["density"], f["pressure"], f["xvel"], f["yvel"], DT)
        do_advect(f["density"], f["energy"], f["xvel"], f["yvel"], DT)
        if step % spec.cadence == 0:
            summaries.append(summary(f["density"], f["energy"], f["pressure"]))
    out = {k: v.ravel() for k, v in f.items()}
    out["summary"] = np.array(summaries)
    return out
