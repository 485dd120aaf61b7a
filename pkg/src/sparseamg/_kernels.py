"""Numba kernels for the sequential sweeps that numpy cannot vectorize."""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True)
def gs_sweep(coeffs, u, f, forward):
    """One lexicographic Gauss-Seidel sweep, in place on u.

    forward=True realizes M = D - L, forward=False the reverse sweep M = D - U.
    """
    n0, n1 = u.shape
    sp, sq = coeffs.shape[0] // 2, coeffs.shape[1] // 2
    ctr = coeffs[sp, sq]
    istart, istop, istep = (0, n0, 1) if forward else (n0 - 1, -1, -1)
    for i in range(istart, istop, istep):
        jstart, jstop, jstep = (0, n1, 1) if forward else (n1 - 1, -1, -1)
        for j in range(jstart, jstop, jstep):
            acc = 0.0
            for s in range(coeffs.shape[0]):
                ii = i + s - sp
                if ii < 0 or ii >= n0:
                    continue
                for t in range(coeffs.shape[1]):
                    jj = j + t - sq
                    if jj < 0 or jj >= n1:
                        continue
                    if s == sp and t == sq:
                        continue
                    acc += coeffs[s, t] * u[ii, jj]
            u[i, j] = (f[i, j] - acc) / ctr


@numba.njit(cache=True, nogil=True)
def csr_gs_sweep(indptr, indices, data, u, f, forward):
    """Lexicographic Gauss-Seidel sweep on an assembled CSR matrix, in place."""
    n = u.shape[0]
    rng = range(n) if forward else range(n - 1, -1, -1)
    for i in rng:
        acc = 0.0
        diag = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                diag = data[p]
            else:
                acc += data[p] * u[j]
        u[i] = (f[i] - acc) / diag
