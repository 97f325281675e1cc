"""NumPy implementations of the hot kernels, used when the extension is absent.

Results are bit-identical to ``_speedups``: every float32 expression is
evaluated in the same order and the per-pose energy is accumulated strictly
left to right (``np.add.accumulate``), never by pairwise summation.
"""
from __future__ import annotations

import numpy as np

HARDNESS = np.float32(4.0)
CUTOFF = np.float32(8.0)


def scan_windows(blob, start: int, stop: int, stride: int, bases: np.ndarray,
                 ends: np.ndarray) -> list[tuple[int, int, int]]:
    """Little-endian u64 windows at ``start, start+stride, ... <= stop`` that fall in a range.

    Returns ``(offset, value, range_index)`` triples in offset order.
    """
    blob = bytes(blob)
    if stop < start or len(bases) == 0:
        return []
    if stop + 8 > len(blob):
        raise ValueError(f"window at {stop} runs past the {len(blob)}-byte blob")
    count = (stop - start) // stride + 1
    values = np.ndarray((count,), dtype="<u8", buffer=blob, offset=start, strides=(stride,))
    idx = np.searchsorted(bases, values, side="right") - 1
    hit = (idx >= 0) & (values < ends[np.maximum(idx, 0)])
    return [(start + int(i) * stride, int(values[i]), int(idx[i])) for i in np.flatnonzero(hit)]


def fasten(protein: np.ndarray, ligand: np.ndarray, transforms: np.ndarray,
           energies: np.ndarray) -> None:
    """Docking energy of every pose; writes ``energies`` in place.

    protein, ligand: (n, 5) float32 rows of x, y, z, radius, charge.
    transforms: (poses, 12) float32 row-major 3x4 affine transforms.
    """
    px, py, pz, pr, pq = (protein[:, i] for i in range(5))
    t = [transforms[:, i:i + 1] for i in range(12)]
    e = np.zeros(len(transforms), dtype=np.float32)
    for x, y, z, lr, lq in ligand:
        lx = ((t[0] * x + t[1] * y) + t[2] * z) + t[3]
        ly = ((t[4] * x + t[5] * y) + t[6] * z) + t[7]
        lz = ((t[8] * x + t[9] * y) + t[10] * z) + t[11]
        dx = lx - px
        dy = ly - py
        dz = lz - pz
        d = np.sqrt((dx * dx + dy * dy) + dz * dz)
        ov = (lr + pr) - d
        steric = np.where(ov > 0, (ov * ov) * HARDNESS, np.float32(0))
        elec = (lq * pq) * np.maximum(CUTOFF - d, np.float32(0))
        terms = steric + elec
        e = np.add.accumulate(np.concatenate([e[:, None], terms], axis=1), axis=1)[:, -1]
    energies[:] = e
