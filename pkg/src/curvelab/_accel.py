"""Optional numba acceleration.

Set ``CURVELAB_DISABLE_NUMBA=1`` to force the pure numpy/python path. Kernels
are written so that both paths compute identical results.
"""
import os

_disabled = os.environ.get("CURVELAB_DISABLE_NUMBA", "").strip().lower() in (
    "1", "true", "yes", "on")

try:
    if _disabled:
        raise ImportError
    import numba
    USE_NUMBA = True
except ImportError:
    numba = None
    USE_NUMBA = False


def jit(func):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(func)
    return func


def thread_cap():
    """Parallelism cap from ``CURVELAB_THREADS`` (defaults to 1)."""
    try:
        return max(1, int(os.environ.get("CURVELAB_THREADS", "1")))
    except ValueError:
        return 1
