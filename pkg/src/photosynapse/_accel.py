"""Backend selection for the integration kernels.

Set ``PHOTOSYNAPSE_DISABLE_NUMBA=1`` to force the pure-numpy path. Numba is
also skipped automatically when it cannot be imported.
"""
import os

_FLAG = "PHOTOSYNAPSE_DISABLE_NUMBA"


def numba_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None


def njit(fn):
    """Compile ``fn`` with numba when available, otherwise return it unchanged."""
    if _numba is None:
        return fn
    return _numba.njit(cache=True, nogil=True)(fn)


def use_numba():
    return HAVE_NUMBA and not numba_disabled()
