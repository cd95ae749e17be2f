"""Optional numba acceleration.

Set ``KITRECOVER_NO_JIT=1`` to force the pure-numpy code paths (useful for
debugging and for the kernel benchmark).  When numba is not importable the
numpy paths are used automatically.
"""
from __future__ import annotations

import os

try:
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _nb = None
    HAVE_NUMBA = False

JIT_DISABLED = (not HAVE_NUMBA) or os.environ.get("KITRECOVER_NO_JIT", "0").lower() in (
    "1",
    "true",
    "yes",
)


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _nb.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda func: func


def use_jit() -> bool:
    return not JIT_DISABLED
