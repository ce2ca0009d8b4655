"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible numpy subset and
compiled with ``numba.njit`` when numba is importable.  Setting the
environment variable ``STALLKIT_DISABLE_NUMBA=1`` (read at import time)
forces the plain numpy path, which runs the very same source in the
interpreter.
"""
import os

_disabled = os.environ.get("STALLKIT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _disabled:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:
    numba = None
    NUMBA_ENABLED = False


def jit(func):
    """Compile ``func`` with ``njit(cache=True)`` if numba is enabled.

    The undecorated python function stays reachable as ``.py_func`` on both
    paths so tests and benchmarks can compare the two.
    """
    if NUMBA_ENABLED:
        compiled = numba.njit(cache=True)(func)
        return compiled
    func.py_func = func
    return func


def backend_name():
    return "numba" if NUMBA_ENABLED else "numpy"
