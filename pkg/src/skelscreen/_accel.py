"""Backend selection for the hot kernels.

Numba is used when importable unless ``SKELSCREEN_NO_NUMBA`` is set to a
truthy value, in which case the pure numpy/Python fallbacks run instead.
"""
import os

_FLAG = os.environ.get("SKELSCREEN_NO_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG in {"1", "true", "yes", "on"}

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED
