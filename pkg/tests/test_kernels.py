import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upage import kernels

BACKENDS = kernels.backends()
needs_compiled = pytest.mark.skipif("compiled" not in BACKENDS,
                                    reason="compiled extension not built")


def _dock_inputs(seed, natpro=60, natlig=7, poses=33):
    rng = np.random.default_rng(seed)
    protein = rng.uniform(-6, 6, (natpro, 5)).astype(np.float32)
    ligand = rng.uniform(-2, 2, (natlig, 5)).astype(np.float32)
    protein[:, 3] = np.abs(protein[:, 3])
    ligand[:, 3] = np.abs(ligand[:, 3])
    transforms = rng.uniform(-1, 1, (poses, 12)).astype(np.float32)
    return protein, ligand, transforms


def test_fallback_matches_direct_formula_for_one_pair():
    protein = np.array([[1, 0, 0, 1.5, 0.5]], dtype=np.float32)
    ligand = np.array([[0, 0, 0, 1.0, -2.0]], dtype=np.float32)
    identity = np.array([[1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0]], dtype=np.float32)
    out = np.empty(1, dtype=np.float32)
    kernels.backends()["python"].fasten(protein, ligand, identity, out)
    # d = 1, overlap 1.5, steric 1.5^2 * 4, electrostatic (-2 * 0.5) * (8 - 1)
    assert out[0] == np.float32(9.0 - 7.0)


@needs_compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_fasten_backends_are_bit_identical(seed):
    protein, ligand, transforms = _dock_inputs(seed)
    out = {}
    for name, impl in BACKENDS.items():
        e = np.empty(len(transforms), dtype=np.float32)
        impl.fasten(protein, ligand, transforms, e)
        out[name] = e.tobytes()
    assert out["compiled"] == out["python"]


@needs_compiled
@settings(max_examples=200, deadline=None)
@given(st.binary(min_size=8, max_size=96), st.integers(0, 7), st.sampled_from([1, 2, 8]),
       st.lists(st.tuples(st.integers(0, 2**64 - 2), st.integers(1, 2**40)), max_size=5))
def test_scan_windows_backends_agree(blob, start, stride, ranges):
    start = min(start, len(blob) - 8)
    stop = start + ((len(blob) - 8 - start) // stride) * stride
    spans = sorted({b: min(b + n, 2**64 - 1) for b, n in ranges}.items())
    bases = np.array([b for b, _ in spans], dtype=np.uint64)
    ends = np.array([e for _, e in spans], dtype=np.uint64)
    results = {name: impl.scan_windows(blob, start, stop, stride, bases, ends)
               for name, impl in BACKENDS.items()}
    assert results["compiled"] == results["python"]


def test_scan_windows_rejects_overrun():
    impl = BACKENDS["python"]
    with pytest.raises(ValueError):
        impl.scan_windows(bytes(12), 0, 8, 2, np.array([1], np.uint64), np.array([2], np.uint64))


def _backend_in_subprocess(value):
    env = dict(os.environ, UPAGE_PURE_PYTHON=value)
    return subprocess.run([sys.executable, "-c", "from upage import kernels; print(kernels.BACKEND)"],
                          env=env, capture_output=True, text=True, check=True).stdout.strip()


def test_environment_forces_fallback():
    assert _backend_in_subprocess("1") == "python"
    expected = "compiled" if "compiled" in BACKENDS else "python"
    assert _backend_in_subprocess("0") == expected
