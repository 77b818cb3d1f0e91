"""Compiled inner loops for row-action sweeps."""

import numba
import numpy as np


@numba.njit(cache=True)
def kaczmarz_sweep(indptr, indices, data, b, norms_sq, rows, x):
    """Project ``x`` successively onto the hyperplanes of ``rows``; returns a new vector."""
    y = x.copy()
    for i in rows:
        lo, hi = indptr[i], indptr[i + 1]
        dot = 0.0
        for p in range(lo, hi):
            dot += data[p] * y[indices[p]]
        coef = (b[i] - dot) / norms_sq[i]
        for p in range(lo, hi):
            y[indices[p]] += coef * data[p]
    return y


def warm_up():
    """Trigger compilation with a 1x1 system."""
    kaczmarz_sweep(
        np.array([0, 1], dtype=np.int32), np.array([0], dtype=np.int32), np.ones(1),
        np.ones(1), np.ones(1), np.zeros(1, dtype=np.int64), np.zeros(1),
    )
