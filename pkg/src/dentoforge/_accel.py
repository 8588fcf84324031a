"""Backend selection for the hot kernels.

Kernels come in two flavours: explicit loops compiled with numba, and a
vectorized numpy path. ``DENTOFORGE_NUMBA=0`` forces the numpy path (useful
when numba is unavailable or when debugging). ``DENTOFORGE_THREADS`` caps the
numba worker pool.
"""
import os

# the bundled TBB is too old for numba; OpenMP is always present
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("DENTOFORGE_NUMBA", "1") != "0"


def njit(*args, **kwargs):
    """``numba.njit`` with on-disk caching; identity when numba is off."""
    kwargs.setdefault("cache", True)

    def wrap(func):
        if not NUMBA_AVAILABLE:
            return func
        return numba.njit(**kwargs)(func)

    if len(args) == 1 and callable(args[0]) and not kwargs.get("parallel"):
        return wrap(args[0])
    return wrap


prange = numba.prange if NUMBA_AVAILABLE else range


def set_threads(n):
    """Cap numba worker threads; ``None`` or ``0`` leaves the default."""
    if n and NUMBA_AVAILABLE:
        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)


def backend():
    return "numba" if USE_NUMBA else "numpy"


set_threads(os.environ.get("DENTOFORGE_THREADS"))
