"""Conjugate-gradient heat solve on a 5-point stencil.

Each step has two reductions whose results the host needs before it can pick
the next step length, so a small reduction buffer bounces between host and
device twice per iteration.  Kernel arguments are closure captures: packed
records whose pointers sit at offsets the metadata does not describe.
"""
from __future__ import annotations

import numpy as np

from .base import App, WorkloadSpec, capture, descriptor

DYNAMIC = False

INIT = "_ZZ7cg_initRK4MeshENKUlvE_clEv"
CALC_W = "_ZZ9cg_calc_wRK4MeshENKUlvE_clEv"
CALC_UR = "_ZZ10cg_calc_urRK4MeshdENKUlvE_clEv"
CALC_P = "_ZZ9cg_calc_pRK4MeshdENKUlvE_clEv"

# Capture record sizes: 2-byte tag, then fields.
_INIT_CAP = 2 + 8 + 8 + 4
_W_CAP = 2 + 8 * 3 + 4
_UR_CAP = 2 + 8 * 5 + 8 + 4
_P_CAP = 2 + 8 * 2 + 8 + 4


def apply_stencil(p: np.ndarray, w: np.ndarray) -> None:
    """w = A p for the 5-point Laplacian with zero boundary values."""
    w[:] = 4.0 * p
    w[1:, :] -= p[:-1, :]
    w[:-1, :] -= p[1:, :]
    w[:, 1:] -= p[:, :-1]
    w[:, :-1] -= p[:, 1:]


def dot(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(x * y))


def do_init(r, red):
    red[0] = dot(r, r)


def do_calc_w(p, w, red):
    apply_stencil(p, w)
    red[1] = dot(p, w)


def do_calc_ur(u, r, p, w, red, alpha):
    u += alpha * p
    r -= alpha * w
    red[2] = dot(r, r)


def do_calc_p(p, r, beta):
    p[:] = r + beta * p


def kernels(spec: WorkloadSpec):
    return [descriptor(INIT, ("val", _INIT_CAP)), descriptor(CALC_W, ("val", _W_CAP)),
            descriptor(CALC_UR, ("val", _UR_CAP)), descriptor(CALC_P, ("val", _P_CAP))]


def bodies(spec: WorkloadSpec):
    n = spec.size
    f8 = np.float64

    def grid(ctx, off):
        return ctx.view(ctx.u64(off), f8, n * n).reshape(n, n)

    def init(ctx):
        do_init(grid(ctx, 2), ctx.view(ctx.u64(10), f8, 3))

    def calc_w(ctx):
        do_calc_w(grid(ctx, 2), grid(ctx, 10), ctx.view(ctx.u64(18), f8, 3))

    def calc_ur(ctx):
        do_calc_ur(grid(ctx, 2), grid(ctx, 10), grid(ctx, 18), grid(ctx, 26),
                   ctx.view(ctx.u64(34), f8, 3), ctx.f64(42))

    def calc_p(ctx):
        do_calc_p(grid(ctx, 2), grid(ctx, 10), ctx.f64(18))

    return {INIT: init, CALC_W: calc_w, CALC_UR: calc_ur, CALC_P: calc_p}


def _initial(spec: WorkloadSpec):
    n = spec.size
    rng = np.random.default_rng(spec.seed)
    rhs = rng.uniform(0.0, 1.0, size=(n, n))
    return np.zeros((n, n)), rhs.copy(), rhs.copy(), np.zeros((n, n)), np.zeros(3)


def run(app: App, spec: WorkloadSpec) -> dict[str, np.ndarray]:
    n = spec.size
    arrays = _initial(spec)
    u, r, p, w, red = (app.alloc(x) for x in arrays)
    app.launch(INIT, capture(("Q", r), ("Q", red), ("i", n)))
    rro = float(app.read(red, np.float64, 3)[0])
    for _ in range(spec.iterations):
        app.launch(CALC_W, capture(("Q", p), ("Q", w), ("Q", red), ("i", n)))
        alpha = rro / float(app.read(red, np.float64, 3)[1])
        app.launch(CALC_UR, capture(("Q", u), ("Q", r), ("Q", p), ("Q", w), ("Q", red),
                                    ("d", alpha), ("i", n)))
        rrn = float(app.read(red, np.float64, 3)[2])
        beta, rro = rrn / rro, rrn
        app.launch(CALC_P, capture(("Q", p), ("Q", r), ("d", beta), ("i", n)))
    out = {}
    for name, addr in (("u", u), ("r", r), ("p", p), ("w", w)):
        out[name] = app.read(addr, np.float64, n * n)
    out["red"] = app.read(red, np.float64, 3)
    return out


def oracle(spec: WorkloadSpec) -> dict[str, np.ndarray]:
    u, r, p, w, red = _initial(spec)
    do_init(r, red)
    rro = float(red[0])
    for _ in range(spec.iterations):
        do_calc_w(p, w, red)
        alpha = rro / float(red[1])
        do_calc_ur(u, r, p, w, red, alpha)
        rrn = float(red[2])
        beta, rro = rrn / rro, rrn
        do_calc_p(p, r, beta)
    return {"u": u.ravel(), "r": r.ravel(), "p": p.ravel(), "w": w.ravel(), "red": red}
