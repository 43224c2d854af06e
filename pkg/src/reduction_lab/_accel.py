"""Numba availability and the env switch that selects the kernel backend.

Set ``REDUCTION_LAB_NUMBA=0`` to force the pure-numpy kernels. Any other
value (or unset) uses numba when it can be imported.
"""

from __future__ import annotations

import os

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    NUMBA_AVAILABLE = False


def _flag_enabled() -> bool:
    raw = os.environ.get("REDUCTION_LAB_NUMBA", "1").strip().lower()
    return raw not in {"0", "false", "no", "off"}


USE_NUMBA = NUMBA_AVAILABLE and _flag_enabled()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise.

    The compiled variants are always built when numba exists so the test
    suite can compare both backends in one process; ``USE_NUMBA`` only
    decides which variant the public dispatchers call.
    """
    if NUMBA_AVAILABLE:
        return _njit(*args, **kwargs)

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator
