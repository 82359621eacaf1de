"""Optional numba acceleration for hot kernels, with a pure-numpy fallback.

Set ``UAVISAC_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The fallback path is the same source code without JIT, so both lanes share
one implementation; ``benchmarks/bench_sdr.py`` compares them.
"""

import os

NUMBA_DISABLED = os.environ.get("UAVISAC_DISABLE_NUMBA", "0") not in ("", "0")

if not NUMBA_DISABLED:
    try:
        import numba as _numba
    except ImportError:
        _numba = None
        NUMBA_DISABLED = True


def njit(*args, **kwargs):
    """numba.njit when enabled, identity decorator otherwise."""
    if NUMBA_DISABLED:
        if args and callable(args[0]):
            return args[0]
        return lambda func: func
    return _numba.njit(*args, **kwargs)
