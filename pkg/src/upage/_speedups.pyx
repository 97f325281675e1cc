# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.  Must stay bit-identical to ``_fallback``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrtf
from libc.stdint cimport uint64_t, uint8_t

cnp.import_array()

cdef float HARDNESS = 4.0
cdef float CUTOFF = 8.0


cdef inline uint64_t _load_le(const uint8_t* p) noexcept nogil:
    cdef uint64_t v = 0
    cdef int k
    for k in range(7, -1, -1):
        v = (v << 8) | p[k]
    return v


def scan_windows(blob, Py_ssize_t start, Py_ssize_t stop, Py_ssize_t stride,
                 const uint64_t[::1] bases, const uint64_t[::1] ends):
    cdef const uint8_t[::1] buf = memoryview(bytes(blob)).cast("B")
    cdef Py_ssize_t n = bases.shape[0]
    cdef Py_ssize_t off, lo, hi, mid
    cdef uint64_t v
    out = []
    if stop < start or n == 0:
        return out
    if stop + 8 > buf.shape[0]:
        raise ValueError(f"window at {stop} runs past the {buf.shape[0]}-byte blob")
    off = start
    while off <= stop:
        v = _load_le(&buf[off])
        lo = 0
        hi = n
        while lo < hi:
            mid = (lo + hi) >> 1
            if bases[mid] <= v:
                lo = mid + 1
            else:
                hi = mid
        if lo > 0 and v < ends[lo - 1]:
            out.append((off, v, lo - 1))
        off += stride
    return out


def fasten(const float[:, ::1] protein, const float[:, ::1] ligand,
           const float[:, ::1] transforms, float[::1] energies):
    cdef Py_ssize_t npose = transforms.shape[0]
    cdef Py_ssize_t nlig = ligand.shape[0]
    cdef Py_ssize_t nprot = protein.shape[0]
    cdef Py_ssize_t i, l, p
    cdef float e, x, y, z, lr, lq, lx, ly, lz, dx, dy, dz, d, ov, steric, c
    cdef const float* t
    if energies.shape[0] != npose:
        raise ValueError("energies must have one entry per pose")
    with nogil:
        for i in range(npose):
            t = &transforms[i, 0]
            e = 0.0
            for l in range(nlig):
                x = ligand[l, 0]
                y = ligand[l, 1]
                z = ligand[l, 2]
                lr = ligand[l, 3]
                lq = ligand[l, 4]
                lx = ((t[0] * x + t[1] * y) + t[2] * z) + t[3]
                ly = ((t[4] * x + t[5] * y) + t[6] * z) + t[7]
                lz = ((t[8] * x + t[9] * y) + t[10] * z) + t[11]
                for p in range(nprot):
                    dx = lx - protein[p, 0]
                    dy = ly - protein[p, 1]
                    dz = lz - protein[p, 2]
                    d = sqrtf((dx * dx + dy * dy) + dz * dz)
                    ov = (lr + protein[p, 3]) - d
                    steric = (ov * ov) * HARDNESS if ov > 0 else <float>0.0
                    c = CUTOFF - d
                    if c < 0:
                        c = 0
                    e = e + (steric + (lq * protein[p, 4]) * c)
            energies[i] = e
