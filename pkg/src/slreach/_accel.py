"""Backend toggle for the numerical kernels.

Kernels in :mod:`slreach._kernels` are written loop-style so that the
exact same source can run either under numba's ``njit`` (the default)
or as plain Python over NumPy arrays.  Set ``SLR_NUMBA=0`` to force the
pure-NumPy fallback, e.g. for debugging or on platforms where numba is
unavailable.
"""

import os

_FALSY = ("0", "false", "off", "no", "")


def _env_enabled(name: str, default: bool = True) -> bool:
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() not in _FALSY


NUMBA_ENABLED = _env_enabled("SLR_NUMBA", True)

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def jit(fn):
        """Compile ``fn`` with numba in nopython mode, caching to disk."""
        return _njit(cache=True)(fn)
else:
    def jit(fn):
        """Identity decorator: run the kernel as plain Python."""
        return fn

BACKEND = "numba" if NUMBA_ENABLED else "numpy"
