"""Backend selection for the hot loops.

Set ``LIFTPDE_DISABLE_NUMBA=1`` to force the pure numpy/Python path even when
numba is importable. The flag is read once, at import time.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("LIFTPDE_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba ships with the dev environment
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator.

    The undecorated function is kept on ``.py_func`` in both cases so callers
    can reach the interpreted version explicitly.
    """
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)

    def wrap(func):
        if NUMBA_AVAILABLE:
            return _numba.njit(**kwargs)(func)
        func.py_func = func
        return func

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap


def worker_count() -> int:
    """Number of worker threads; ``LIFTPDE_THREADS`` overrides the CPU count."""
    env = os.environ.get("LIFTPDE_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ValueError(f"LIFTPDE_THREADS must be a positive integer, got {env!r}") from None
        if value < 1:
            raise ValueError(f"LIFTPDE_THREADS must be a positive integer, got {env!r}")
        return value
    return os.cpu_count() or 1
