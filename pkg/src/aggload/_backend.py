"""Select between numba-compiled kernels and the pure-numpy fallback.

Set ``AGGLOAD_BACKEND=numpy`` to force the fallback; the default is
``numba`` whenever numba imports cleanly.
"""

from __future__ import annotations

import os
import warnings

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        """No-op stand-in used when numba is unavailable."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def _resolve_backend() -> str:
    requested = os.environ.get("AGGLOAD_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        warnings.warn(f"unknown AGGLOAD_BACKEND={requested!r}, using numpy")
        return "numpy"
    if requested == "numba" and not HAS_NUMBA:
        warnings.warn("numba is not importable, falling back to numpy kernels")
        return "numpy"
    return requested


BACKEND = _resolve_backend()


def max_workers() -> int:
    """Worker cap from ``AGGLOAD_THREADS`` (default 1)."""
    raw = os.environ.get("AGGLOAD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1
