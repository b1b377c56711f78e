"""Comparator network selecting the median of 27 values."""
import numpy as np


def batcher_pairs(n):
    """Batcher odd-even merge sort comparators for a power-of-two width."""
    out = []

    def merge(lo, size, r):
        step = r * 2
        if step < size:
            merge(lo, size, step)
            merge(lo + r, size, step)
            for i in range(lo + r, lo + size - r, step):
                out.append((i, i + r))
        else:
            out.append((lo, lo + r))

    def sort(lo, size):
        if size > 1:
            m = size // 2
            sort(lo, m)
            sort(lo + m, m)
            merge(lo, size, 1)

    sort(0, n)
    return out


def selection_network(width=32, target=13):
    """Prune a sorting network to the comparators that feed output ``target``.

    Inputs beyond the real values are padded with the dtype maximum, so
    output 13 of a 32-wide network is the median of 27 real values.
    """
    need = {target}
    kept = []
    for i, j in reversed(batcher_pairs(width)):
        if i in need or j in need:
            kept.append((i, j))
            need |= {i, j}
    kept.reverse()
    return np.array(kept, dtype=np.int64)


MEDIAN27 = selection_network()
