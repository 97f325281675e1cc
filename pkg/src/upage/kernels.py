"""Hot-kernel backend selection.

The compiled ``_speedups`` extension is used when it imports; otherwise the
NumPy fallback.  ``UPAGE_PURE_PYTHON=1`` forces the fallback.
"""
from __future__ import annotations

import os
from types import ModuleType

from . import _fallback


def _load_compiled() -> ModuleType | None:
    try:
        from . import _speedups
    except ImportError:
        return None
    return _speedups


_compiled = _load_compiled()

if _compiled is not None and os.environ.get("UPAGE_PURE_PYTHON", "") in ("", "0"):
    BACKEND = "compiled"
    _impl: ModuleType = _compiled
else:
    BACKEND = "python"
    _impl = _fallback

scan_windows = _impl.scan_windows
fasten = _impl.fasten


def backends() -> dict[str, ModuleType]:
    """Every importable backend, for cross-checks and benchmarks."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
