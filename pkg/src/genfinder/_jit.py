"""Optional numba acceleration.

Set ``GENFINDER_DISABLE_JIT=1`` to force the pure-numpy kernels (useful for
debugging and for comparing both paths in ``benchmarks/bench_kernels.py``).
"""
import os

_DISABLED = os.environ.get("GENFINDER_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if numba is None:
        def wrap(fn):
            return fn
        return wrap(args[0]) if args and callable(args[0]) else wrap
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)
