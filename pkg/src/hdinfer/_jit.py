"""Numba availability and the env switch for the numpy fallback path.

Every hot kernel in :mod:`hdinfer._kernels` exists twice: an explicit-loop
version compiled with ``numba.njit`` and a vectorised numpy version.
``HDINFER_NO_JIT=1`` routes the public dispatchers to the numpy versions.
"""
import os

_flag = os.environ.get("HDINFER_NO_JIT", "").strip().lower()
JIT_REQUESTED = _flag in ("", "0", "false", "no")

try:
    from numba import njit as _numba_njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    HAS_NUMBA = False

JIT_ENABLED = JIT_REQUESTED and HAS_NUMBA


def njit(func=None, **kwargs):
    """``numba.njit`` with cache/nogil on; identity when numba is missing."""
    if not HAS_NUMBA:  # pragma: no cover
        if func is not None:
            return func
        return lambda f: f
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if func is not None:
        return _numba_njit(**kwargs)(func)
    return _numba_njit(**kwargs)
