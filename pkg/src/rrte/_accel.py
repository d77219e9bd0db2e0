"""Backend switch for the hot numeric kernels.

Every kernel in :mod:`rrte.kernels` exists twice: a numba ``@njit`` loop
version and a pure-numpy (or plain Python) version.  The numba path is used
unless the environment variable ``RRTE_DISABLE_NUMBA`` is set to a truthy
value before :mod:`rrte` is imported, or numba is not importable.
"""

from __future__ import annotations

import os

_FALSY = {"", "0", "false", "no", "off"}

NUMBA_REQUESTED = os.environ.get("RRTE_DISABLE_NUMBA", "").strip().lower() in _FALSY

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
