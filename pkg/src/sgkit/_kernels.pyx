# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must agree bit-for-bit with ``_kernels_py``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def scatter_add_rows(const double[:, ::1] values, const cnp.int64_t[::1] index, Py_ssize_t n_rows):
    """out[index[k]] += values[k] for every row k, accumulated in row order."""
    cdef Py_ssize_t k, c, r
    cdef Py_ssize_t n_cols = values.shape[1]
    out = np.zeros((n_rows, n_cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    if values.shape[0] != index.shape[0]:
        raise ValueError("values and index disagree in length")
    for k in range(values.shape[0]):
        r = index[k]
        if r < 0 or r >= n_rows:
            raise IndexError(f"row index {r} out of range")
        for c in range(n_cols):
            o[r, c] += values[k, c]
    return out


def segment_mean(const double[:, ::1] values, const cnp.int64_t[::1] index, Py_ssize_t n_rows):
    """Row-wise mean of ``values`` grouped by ``index``; empty groups stay zero."""
    cdef Py_ssize_t k, c, r
    cdef Py_ssize_t n_cols = values.shape[1]
    out = scatter_add_rows(values, index, n_rows)
    cdef double[:, ::1] o = out
    counts = np.zeros(n_rows, dtype=np.int64)
    cdef cnp.int64_t[::1] cnt = counts
    for k in range(index.shape[0]):
        cnt[index[k]] += 1
    for r in range(n_rows):
        if cnt[r] > 1:
            for c in range(n_cols):
                o[r, c] = o[r, c] / cnt[r]
    return out, counts


def fisher_yates(cnp.int64_t[::1] order, const cnp.int64_t[::1] draws):
    """In-place Fisher-Yates: for i = n-1 .. 1 swap order[i] with order[draws[n-1-i]]."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, j
    cdef cnp.int64_t tmp
    if draws.shape[0] != max(n - 1, 0):
        raise ValueError("need exactly n-1 draws")
    for i in range(n - 1, 0, -1):
        j = draws[n - 1 - i]
        if j < 0 or j > i:
            raise ValueError(f"draw {j} out of range for position {i}")
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp
