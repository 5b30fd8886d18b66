# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled grid search. Results must match ``_kernels_py`` bit for bit."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

IMPLEMENTATION = "cython"


def grid_best(double[:, ::1] acc, double[:, ::1] lat, long[::1] sizes, double budget):
    """Exhaustive search over the index grid ``prod(range(sizes[i]))``.

    Returns ``(index_tuple | None, best_acc, best_lat)``. Best is maximal
    accuracy, then minimal latency sum, then the lexicographically first index.
    """
    cdef Py_ssize_t n = sizes.shape[0], i, j, k, last
    cdef long[::1] idx = np.zeros(n, dtype=np.int_)
    cdef long[::1] best = np.zeros(n, dtype=np.int_)
    cdef double[::1] pacc = np.zeros(n + 1)
    cdef double[::1] plat = np.zeros(n + 1)
    cdef double[::1] rest_min = np.zeros(n + 1)
    cdef double best_acc = 0.0, best_lat = 0.0, a, l, margin, m
    cdef bint found = False
    for i in range(n):
        if sizes[i] <= 0:
            return None, 0.0, 0.0
    for i in range(n - 1, -1, -1):
        m = lat[i, 0]
        for k in range(1, sizes[i]):
            if lat[i, k] < m:
                m = lat[i, k]
        rest_min[i] = rest_min[i + 1] + m
    margin = 1e-9 * (1.0 + abs(budget))

    i = 0
    idx[0] = 0
    last = n - 1
    while True:
        # descend: fill prefix sums for levels i..n-2 at current indices
        while i < last:
            pacc[i + 1] = pacc[i] + acc[i, idx[i]]
            plat[i + 1] = plat[i] + lat[i, idx[i]]
            if plat[i + 1] + rest_min[i + 1] > budget + margin:
                break  # no completion of this prefix is feasible
            i += 1
        if i == last:
            # innermost level as a plain loop
            for k in range(sizes[last]):
                l = plat[last] + lat[last, k]
                if l <= budget:
                    a = pacc[last] + acc[last, k]
                    if (not found) or a > best_acc or (a == best_acc and l < best_lat):
                        found = True
                        best_acc = a
                        best_lat = l
                        for j in range(last):
                            best[j] = idx[j]
                        best[last] = k
            if last == 0:
                break
            i = last - 1
        # advance odometer at level i
        while True:
            idx[i] += 1
            if idx[i] < sizes[i]:
                break
            idx[i] = 0
            if i == 0:
                i = -1
                break
            i -= 1
        if i < 0:
            break
    if found:
        return tuple(int(best[k]) for k in range(n)), best_acc, best_lat
    return None, 0.0, 0.0
