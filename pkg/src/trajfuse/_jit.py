"""Optional numba acceleration.

Every kernel in this package is written against the numpy subset that numba
supports in nopython mode, so the same code runs (slowly) when numba is not
installed. Set TRAJFUSE_DISABLE_JIT=1 to force the pure-python path.
"""

import os

if os.environ.get("TRAJFUSE_DISABLE_JIT", "0") == "1":
    _HAVE_NUMBA = False
else:
    try:
        from numba import njit as _numba_njit

        _HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        _HAVE_NUMBA = False


def njit(*args, **kwargs):
    """@njit(cache=True) when numba is available, identity decorator otherwise."""
    if _HAVE_NUMBA:
        return _numba_njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]):
        return args[0]

    def wrap(func):
        return func

    return wrap
