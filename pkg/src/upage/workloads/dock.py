"""Molecular-docking style energy evaluation: little data, lots of arithmetic.

Kernels are reached through a runtime-loaded module, so launches carry
function handles rather than registered host stubs.
"""
from __future__ import annotations

import struct

import numpy as np

from .. import kernels as hot
from .base import App, WorkloadSpec, descriptor, ptr

DYNAMIC = True
FASTEN = "_Z11fasten_mainiiiPK4AtomS1_PKfS3_S3_S3_S3_S3_S3_Pf"

# Arithmetic per protein/ligand atom pair and per transformed ligand atom.
FLOPS_PER_PAIR = 18
FLOPS_PER_TRANSFORM = 18


def flops(poses: int, natlig: int, natpro: int) -> int:
    return poses * natlig * (FLOPS_PER_PAIR * natpro + FLOPS_PER_TRANSFORM)


def kernels(spec: WorkloadSpec):
    return [descriptor(FASTEN, ("val", 4), ("val", 4), ("val", 4),
                       ("ptr", 8), ("ptr", 8), ("ptr", 8), ("ptr", 8))]


def _shape(spec: WorkloadSpec) -> tuple[int, int, int]:
    return spec.size, spec.get("natlig", 26), spec.get("natpro", 938)


def bodies(spec: WorkloadSpec):
    f4 = np.float32

    def fasten(ctx):
        natlig, natpro, poses = ctx.i32(0), ctx.i32(4), ctx.i32(8)
        protein = ctx.view(ctx.u64(16), f4, natpro * 5).reshape(natpro, 5)
        ligand = ctx.view(ctx.u64(24), f4, natlig * 5).reshape(natlig, 5)
        transforms = ctx.view(ctx.u64(32), f4, poses * 12).reshape(poses, 12)
        energies = ctx.view(ctx.u64(40), f4, poses)
        hot.fasten(protein, ligand, transforms, energies)
        ctx.flops(flops(poses, natlig, natpro))

    return {FASTEN: fasten}


def _initial(spec: WorkloadSpec):
    poses, natlig, natpro = _shape(spec)
    rng = np.random.default_rng(spec.seed)

    def atoms(n, spread):
        a = np.empty((n, 5), dtype=np.float32)
        a[:, :3] = rng.uniform(-spread, spread, (n, 3))
        a[:, 3] = rng.uniform(1.0, 2.0, n)
        a[:, 4] = rng.uniform(-1.0, 1.0, n)
        return a

    protein = atoms(natpro, 12.0)
    ligand = atoms(natlig, 3.0)
    transforms = np.empty((poses, 12), dtype=np.float32)
    for i in range(3):
        transforms[:, 4 * i:4 * i + 3] = rng.uniform(-1.0, 1.0, (poses, 3))
        transforms[:, 4 * i + 3] = rng.uniform(-4.0, 4.0, poses)
    return protein, ligand, transforms, np.zeros(poses, dtype=np.float32)


def run(app: App, spec: WorkloadSpec) -> dict[str, np.ndarray]:
    poses, natlig, natpro = _shape(spec)
    protein, ligand, transforms, energies = (app.alloc(x) for x in _initial(spec))
    counts = (struct.pack("<i", natlig), struct.pack("<i", natpro), struct.pack("<i", poses))
    for _ in range(spec.iterations):
        app.launch(FASTEN, *counts, ptr(protein), ptr(ligand), ptr(transforms), ptr(energies))
    return {"energies": app.read(energies, np.float32, poses)}


def oracle(spec: WorkloadSpec) -> dict[str, np.ndarray]:
    protein, ligand, transforms, energies = _initial(spec)
    for _ in range(spec.iterations):
        hot.fasten(protein, ligand, transforms, energies)
    return {"energies": energies}
