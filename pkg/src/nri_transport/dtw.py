"""Dynamic time warping with absolute-difference cost and unit steps."""
from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True)
def _dtw_table(a, b):
    n, m = a.shape[0], b.shape[0]
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = abs(a[i - 1] - b[j - 1])
            best = D[i - 1, j - 1]
            if D[i - 1, j] < best:
                best = D[i - 1, j]
            if D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = cost + best
    return D


def dtw_distance(a, b) -> float:
    a = np.ascontiguousarray(a, dtype=np.float64).ravel()
    b = np.ascontiguousarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("DTW needs non-empty series")
    return float(_dtw_table(a, b)[-1, -1])


def pairwise_dtw(series) -> np.ndarray:
    """Symmetric [N, N] DTW distance matrix for ``series`` [N, T]."""
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[0]
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = dtw_distance(series[i], series[j])
    return d
