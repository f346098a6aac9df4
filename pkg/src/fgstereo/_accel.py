"""Backend switch for the hot kernels.

Every hot loop in the package exists twice: a numba ``@njit`` kernel and a
vectorised numpy fallback.  The numba path is used when numba imports and
``FGSTEREO_DISABLE_NUMBA`` is unset (or ``0``).  Tests and the benchmark flip
the backend at runtime with :func:`set_backend`.
"""
import os

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    # the TBB layer needs a newer runtime than many distros ship
    if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f

    prange = range


def _env_disabled():
    return os.environ.get("FGSTEREO_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


_backend = "numpy" if (_env_disabled() or not HAVE_NUMBA) else "numba"


def backend():
    """Name of the active kernel backend, ``"numba"`` or ``"numpy"``."""
    return _backend


def use_numba():
    return _backend == "numba"


def set_backend(name):
    """Select the kernel backend; returns the previous one."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


def configure_threads():
    """Apply ``FGSTEREO_WORKERS`` to numba's thread pool, if set."""
    workers = os.environ.get("FGSTEREO_WORKERS")
    if workers and HAVE_NUMBA:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))
