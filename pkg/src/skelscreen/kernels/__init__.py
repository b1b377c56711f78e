"""Hot numeric kernels with interchangeable numba and numpy backends.

Both backends expose the same five functions:

``median3(a)``
    3x3x3 median with edge replication on an int16 volume indexed ``[x, y, z]``.
``watershed_flood(hu, classes)``
    Resolve Border voxels (class 1) by HU-descending marker flooding.
``grow_round(X, sorted_idx, g, h, max_depth, min_gain_rel)``
    Grow one regression tree per class, level-wise, exact greedy splits.
    ``g`` and ``h`` are int64 fixed-point (n, K) arrays, so node sums are exact
    and both backends grow identical trees.
``compact_trees(feat, thr, val, exists)``
    Turn heap-layout trees into flat node arrays.
``predict_raw(X, feature, threshold, left, right, value, tree_offset, n_classes)``
    Sum leaf values over all trees into per-class raw scores.
"""
from __future__ import annotations

from types import ModuleType

from .._accel import HAVE_NUMBA, USE_NUMBA
from . import _numpy as numpy_backend

BACKGROUND, BORDER, BONE = 0, 1, 2


def get_backend(name: str | None = None) -> ModuleType:
    """Return a kernel backend module: ``"numba"``, ``"numpy"`` or the active one."""
    if name is None:
        name = "numba" if USE_NUMBA else "numpy"
    if name == "numpy":
        return numpy_backend
    if name == "numba":
        if not HAVE_NUMBA:
            raise ImportError("numba backend requested but numba is not installed")
        from . import _numba

        return _numba
    raise ValueError(f"unknown backend {name!r}")


def active_backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


_active = get_backend()
median3 = _active.median3
watershed_flood = _active.watershed_flood
grow_round = _active.grow_round
compact_trees = _active.compact_trees
predict_raw = _active.predict_raw
