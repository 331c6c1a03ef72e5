"""Backend switch for the compiled kernels.

Kernels in :mod:`cellscatter._kernels` exist twice: a numba ``@njit`` loop and
a pure-numpy equivalent.  The numba path is used when numba imports cleanly,
unless ``CELLSCATTER_DISABLE_NUMBA`` is set to a truthy value before the
package is imported.
"""

import os

_FLAG = os.environ.get("CELLSCATTER_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV


def njit(func):
    """``numba.njit(cache=True, nogil=True)`` or a no-op without numba."""
    if not HAVE_NUMBA:
        return func
    return numba.njit(cache=True, nogil=True)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
