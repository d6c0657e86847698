"""Pure-Python/numpy versions of the compiled kernels (same results, same order)."""

import numpy as np


def scatter_add_rows(values, index, n_rows):
    values = np.ascontiguousarray(values, dtype=np.float64)
    index = np.ascontiguousarray(index, dtype=np.int64)
    if values.shape[0] != index.shape[0]:
        raise ValueError("values and index disagree in length")
    if index.size and (index.min() < 0 or index.max() >= n_rows):
        raise IndexError("row index out of range")
    out = np.zeros((n_rows, values.shape[1]), dtype=np.float64)
    # unbuffered, applied in row order like the compiled loop
    np.add.at(out, index, values)
    return out


def segment_mean(values, index, n_rows):
    out = scatter_add_rows(values, index, n_rows)
    counts = np.bincount(np.asarray(index, dtype=np.int64), minlength=n_rows).astype(np.int64)
    many = counts > 1
    out[many] /= counts[many, None]
    return out, counts


def fisher_yates(order, draws):
    n = order.shape[0]
    if draws.shape[0] != max(n - 1, 0):
        raise ValueError("need exactly n-1 draws")
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = int(draws[k])
        if j < 0 or j > i:
            raise ValueError(f"draw {j} out of range for position {i}")
        order[i], order[j] = order[j], order[i]
