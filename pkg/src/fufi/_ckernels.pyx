# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled block kernels. Inputs are validated by :mod:`fufi.kernels`."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log

cnp.import_array()


def block_sum(const double[:, :, ::1] x, Py_ssize_t s):
    cdef Py_ssize_t c, i, j, ci, cj
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    out_arr = np.zeros((C, H // s, W // s), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for c in range(C):
            for i in range(H):
                ci = i // s
                for j in range(W):
                    cj = j // s
                    out[c, ci, cj] += x[c, i, j]
    return out_arr


def block_normalize(const double[:, :, ::1] x, Py_ssize_t s, double eps):
    cdef Py_ssize_t c, i, j
    cdef Py_ssize_t C = x.shape[0], H = x.shape[1], W = x.shape[2]
    sums_arr = block_sum(x, s)
    cdef double[:, :, ::1] sums = sums_arr
    out_arr = np.empty((C, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    with nogil:
        for c in range(C):
            for i in range(H):
                for j in range(W):
                    out[c, i, j] = x[c, i, j] / (sums[c, i // s, j // s] + eps)
    return out_arr


def block_kl(const double[:, :, ::1] pred, const double[:, :, ::1] truth,
             Py_ssize_t s, double eps_kl):
    cdef Py_ssize_t c, bi, bj, i, j
    cdef Py_ssize_t C = pred.shape[0], BH = pred.shape[1] // s, BW = pred.shape[2] // s
    cdef double total = 0.0, block, tsum, p, q
    with nogil:
        for c in range(C):
            for bi in range(BH):
                for bj in range(BW):
                    tsum = 0.0
                    for i in range(bi * s, bi * s + s):
                        for j in range(bj * s, bj * s + s):
                            tsum += truth[c, i, j]
                    if tsum <= 0.0:
                        continue
                    block = 0.0
                    for i in range(bi * s, bi * s + s):
                        for j in range(bj * s, bj * s + s):
                            p = pred[c, i, j]
                            if p <= 0.0:
                                continue
                            q = truth[c, i, j]
                            if q < eps_kl:
                                q = eps_kl
                            block += p * (log(p) - log(q))
                    total += block
    return total


def wilcoxon_null_counts(const long long[::1] ranks2):
    """Number of sign assignments reaching each doubled-rank positive sum."""
    cdef Py_ssize_t n = ranks2.shape[0], k, t, total = 0
    for k in range(n):
        total += ranks2[k]
    counts_arr = np.zeros(total + 1, dtype=np.float64)
    cdef double[::1] counts = counts_arr
    cdef Py_ssize_t reach = 0, r
    counts[0] = 1.0
    with nogil:
        for k in range(n):
            r = ranks2[k]
            reach += r
            t = reach
            while t >= r:
                counts[t] += counts[t - r]
                t -= 1
    return counts_arr
