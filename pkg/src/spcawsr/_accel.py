"""Numba switch for the hot kernels.

Set ``SPCAWSR_DISABLE_NUMBA=1`` before import to run the pure-numpy paths.
Kernels that exist in both flavours are selected through
:data:`USE_NUMBA`; callers never import numba directly.
"""

import os

_DISABLED = os.environ.get("SPCAWSR_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by SPCAWSR_DISABLE_NUMBA")
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE


def njit(func=None, **kwargs):
    """``numba.njit(cache=True)`` when enabled, identity decorator otherwise."""
    kwargs.setdefault("cache", True)

    def decorator(f):
        return _njit(**kwargs)(f) if USE_NUMBA else f

    return decorator(func) if func is not None else decorator


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
