"""Backend switch for the compiled kernels.

``SLICE_ATTRIB_BACKEND=numpy`` forces the pure numpy/python path even when
numba is importable; the default is ``numba``.
"""

import logging
import os

logger = logging.getLogger(__name__)

BACKEND_ENV = "SLICE_ATTRIB_BACKEND"

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the declared deps
    numba = None
    HAS_NUMBA = False


def requested_backend():
    value = os.environ.get(BACKEND_ENV, "numba").strip().lower()
    if value not in ("numba", "numpy"):
        logger.warning("unknown %s=%r, falling back to numba", BACKEND_ENV, value)
        value = "numba"
    return value


USE_NUMBA = HAS_NUMBA and requested_backend() == "numba"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator.

    The compiled variant is always built when numba imports, so the benchmark
    can time both paths inside one process; the backend flag only decides
    which one the public kernels dispatch to.
    """
    kwargs.setdefault("cache", True)
    if HAS_NUMBA:
        return numba.njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def decorator(func):
        return func

    return decorator
