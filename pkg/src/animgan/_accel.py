"""Numba toggle.

Set ``ANIMGAN_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""

import os

try:
    import numba
except ModuleNotFoundError:  # pragma: no cover - numba is a declared dependency
    numba = None

__all__ = ["HAVE_NUMBA", "USE_NUMBA", "njit"]

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and os.environ.get("ANIMGAN_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(f=None, **setting):
    setting.setdefault("cache", True)
    if numba is None:
        if f is None:
            return lambda f: f
        return f
    if f is None:
        return lambda f: numba.njit(f, **setting)
    return numba.njit(f, **setting)
