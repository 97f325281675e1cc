"""Compiled extension vs NumPy fallback on the two hot kernels.

    python benchmarks/bench_backends.py [--repeat N]

Prints one line per (kernel, backend) with the best-of-N wall time, and
checks that both backends return identical results before timing them.
"""
from __future__ import annotations

import argparse
import random
import timeit

import numpy as np

from upage import kernels


def scan_case(seed: int = 1):
    rng = random.Random(seed)
    blobs = [bytes(rng.getrandbits(8) for _ in range(256)) for _ in range(2000)]
    bases = np.array(sorted(rng.sample(range(1 << 20, 1 << 40, 1 << 16), 64)), dtype=np.uint64)
    ends = bases + np.uint64(1 << 14)

    def run(impl):
        return [impl.scan_windows(b, 0, 248, 2, bases, ends) for b in blobs]
    return run


def fasten_case(seed: int = 2, natpro: int = 938, natlig: int = 26, poses: int = 512):
    rng = np.random.default_rng(seed)
    protein = rng.uniform(-10, 10, (natpro, 5)).astype(np.float32)
    ligand = rng.uniform(-3, 3, (natlig, 5)).astype(np.float32)
    transforms = rng.uniform(-1, 1, (poses, 12)).astype(np.float32)

    def run(impl):
        out = np.empty(poses, dtype=np.float32)
        impl.fasten(protein, ligand, transforms, out)
        return out.tobytes()
    return run


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the fallback is available")
    for name, case in (("scan_windows", scan_case()), ("fasten", fasten_case())):
        results = {b: case(impl) for b, impl in backends.items()}
        if len(set(map(repr, results.values()))) != 1:
            raise SystemExit(f"{name}: backends disagree")
        times = {b: min(timeit.repeat(lambda: case(impl), number=1, repeat=args.repeat))
                 for b, impl in backends.items()}
        for b, t in times.items():
            print(f"{name:13s} {b:9s} {t * 1e3:9.2f} ms")
        if "compiled" in times:
            print(f"{name:13s} speedup   {times['python'] / times['compiled']:9.1f}x")


if __name__ == "__main__":
    main()
