"""Compiled inner loop for Top-K neighbour selection."""
import numba
import numpy as np


@numba.njit(cache=True)
def topk_by_key(x, neighbors, valid, k, mode, out_ids, out_count):
    """Per row of ``neighbors`` keep the ``k`` candidates with the smallest key.

    mode 0: key = ||x[c] - x[e]||^2; mode 1: key = -<x[c], x[e]>.
    Rows must be ascending so that equal keys keep the smaller edge id.
    """
    E, M = neighbors.shape
    D = x.shape[1]
    keys = np.empty(k)
    ids = np.empty(k, dtype=np.int64)
    for e in range(E):
        n = 0
        for m in range(M):
            if not valid[e, m]:
                continue
            c = neighbors[e, m]
            s = 0.0
            if mode == 0:
                for d in range(D):
                    t = x[c, d] - x[e, d]
                    s += t * t
            else:
                for d in range(D):
                    s -= x[c, d] * x[e, d]
            if n < k:
                j = n
                n += 1
            elif s < keys[k - 1]:
                j = k - 1
            else:
                continue
            while j > 0 and keys[j - 1] > s:
                keys[j] = keys[j - 1]
                ids[j] = ids[j - 1]
                j -= 1
            keys[j] = s
            ids[j] = c
        out_count[e] = n
        for j in range(n):
            out_ids[e, j] = ids[j]
