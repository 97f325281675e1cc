"""STREAM-style bandwidth kernels: copy, mul, add, triad over three float64 arrays."""
from __future__ import annotations

import struct

import numpy as np

from .base import App, WorkloadSpec, descriptor, ptr

START_A, START_B, START_C = 0.1, 0.2, 0.0
SCALAR = 0.4
DYNAMIC = False

COPY = "_Z11copy_kernelIdEvPKT_PS0_"
MUL = "_Z10mul_kernelIdEvPT_PKS0_"
ADD = "_Z10add_kernelIdEvPKT_S2_PS0_"
TRIAD = "_Z12triad_kernelIdEvPT_PKS0_S3_"


def do_copy(a, c):
    c[:] = a


def do_mul(b, c, scalar):
    np.multiply(c, scalar, out=b)


def do_add(a, b, c):
    np.add(a, b, out=c)


def do_triad(a, b, c, scalar):
    np.add(b, scalar * c, out=a)


def kernels(spec: WorkloadSpec):
    return [
        descriptor(COPY, ("ptr", 8), ("ptr", 8)),
        descriptor(MUL, ("ptr", 8), ("ptr", 8), ("val", 8)),
        descriptor(ADD, ("ptr", 8), ("ptr", 8), ("ptr", 8)),
        # a, b, c, scalar: pointers at 0/8/16, the scalar by value at 24.
        descriptor(TRIAD, ("ptr", 8), ("ptr", 8), ("ptr", 8), ("val", 8)),
    ]


def bodies(spec: WorkloadSpec):
    n = spec.size
    f8 = np.float64

    def copy(ctx):
        do_copy(ctx.view(ctx.u64(0), f8, n), ctx.view(ctx.u64(8), f8, n))

    def mul(ctx):
        do_mul(ctx.view(ctx.u64(0), f8, n), ctx.view(ctx.u64(8), f8, n), ctx.f64(16))

    def add(ctx):
        do_add(ctx.view(ctx.u64(0), f8, n), ctx.view(ctx.u64(8), f8, n),
               ctx.view(ctx.u64(16), f8, n))

    def triad(ctx):
        do_triad(ctx.view(ctx.u64(0), f8, n), ctx.view(ctx.u64(8), f8, n),
                 ctx.view(ctx.u64(16), f8, n), ctx.f64(24))

    return {COPY: copy, MUL: mul, ADD: add, TRIAD: triad}


def run(app: App, spec: WorkloadSpec) -> dict[str, np.ndarray]:
    n = spec.size
    a = app.alloc(np.full(n, START_A))
    b = app.alloc(np.full(n, START_B))
    c = app.alloc(np.full(n, START_C))
    s = struct.pack("<d", SCALAR)
    for _ in range(spec.iterations):
        app.launch(COPY, ptr(a), ptr(c))
        app.launch(MUL, ptr(b), ptr(c), s)
        app.launch(ADD, ptr(a), ptr(b), ptr(c))
        app.launch(TRIAD, ptr(a), ptr(b), ptr(c), s)
    return {"a": app.read(a, np.float64, n), "b": app.read(b, np.float64, n),
            "c": app.read(c, np.float64, n)}


def oracle(spec: WorkloadSpec) -> dict[str, np.ndarray]:
    n = spec.size
    a, b, c = np.full(n, START_A), np.full(n, START_B), np.full(n, START_C)
    for _ in range(spec.iterations):
        do_copy(a, c)
        do_mul(b, c, SCALAR)
        do_add(a, b, c)
        do_triad(a, b, c, SCALAR)
    return {"a": a, "b": b, "c": c}
