"""Optional numba acceleration.

Hot kernels are written once in a numba-compatible subset of Python and
compiled with ``njit`` when numba is importable and ``WBKAN_DISABLE_NUMBA`` is
unset (or ``0``). Otherwise the pure-numpy fallbacks are used.
"""
import os

_flag = os.environ.get("WBKAN_DISABLE_NUMBA", "0").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    _njit = None
    HAVE_NUMBA = False


def njit(fn):
    """Compile ``fn`` with numba when enabled; return it unchanged otherwise."""
    if HAVE_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn
