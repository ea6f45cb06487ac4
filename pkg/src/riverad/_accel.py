"""Numba switch.

Set ``RIVERAD_DISABLE_NUMBA=1`` before import to run every kernel on its
pure-numpy path. The flag is read once, at import time.
"""

import os

_FALSY = {"", "0", "false", "no", "off"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("RIVERAD_DISABLE_NUMBA", "").strip().lower() in _FALSY


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is importable.

    The undecorated function is still reachable as ``fn.py_func`` on the
    compiled object; when numba is missing the function is returned as is.
    """
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
