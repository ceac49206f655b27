# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: the fused loops that measured faster than
numpy at trial-graph sizes (pairwise attention logits, row softmax and
log-sum-exp with their adjoints, the PRNG fill).  Matrix products,
elementwise ops and the pairwise-logit adjoints stay on numpy/BLAS in
both backends; see gatsv.backend for the composition."""

from libc.math cimport exp as c_exp, log as c_log
from libc.stdint cimport uint64_t

import numpy as np

NAME = "c"

cdef double _INV_2_53 = 2.0 ** -53


def softmax_rows(double[:, ::1] a):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, s
    with nogil:
        for i in range(n):
            mx = a[i, 0]
            for j in range(1, m):
                if a[i, j] > mx:
                    mx = a[i, j]
            s = 0.0
            for j in range(m):
                out[i, j] = c_exp(a[i, j] - mx)
                s += out[i, j]
            for j in range(m):
                out[i, j] /= s
    return out_arr


def softmax_rows_grad(double[:, ::1] y, double[:, ::1] dy):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += dy[i, j] * y[i, j]
            for j in range(m):
                out[i, j] = y[i, j] * (dy[i, j] - dot)
    return out_arr


def logsumexp_rows(double[:, ::1] a, mask):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    out_arr = np.empty((n, 1), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] msk
    cdef bint has_mask = mask is not None
    cdef Py_ssize_t i, j
    cdef double mx, s
    cdef bint seen
    if has_mask:
        msk = mask
        with nogil:
            for i in range(n):
                mx = 0.0
                seen = False
                for j in range(m):
                    if msk[i, j] != 0.0 and (not seen or a[i, j] > mx):
                        mx = a[i, j]
                        seen = True
                s = 0.0
                for j in range(m):
                    if msk[i, j] != 0.0:
                        s += c_exp(a[i, j] - mx)
                out[i, 0] = mx + c_log(s)
    else:
        with nogil:
            for i in range(n):
                mx = a[i, 0]
                for j in range(1, m):
                    if a[i, j] > mx:
                        mx = a[i, j]
                s = 0.0
                for j in range(m):
                    s += c_exp(a[i, j] - mx)
                out[i, 0] = mx + c_log(s)
    return out_arr


def logsumexp_rows_grad(double[:, ::1] a, mask, double[:, ::1] lse, double[:, ::1] dy):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] msk
    cdef bint has_mask = mask is not None
    cdef Py_ssize_t i, j
    if has_mask:
        msk = mask
        with nogil:
            for i in range(n):
                for j in range(m):
                    if msk[i, j] != 0.0:
                        out[i, j] = c_exp(a[i, j] - lse[i, 0]) * dy[i, 0]
                    else:
                        out[i, j] = 0.0
    else:
        with nogil:
            for i in range(n):
                for j in range(m):
                    out[i, j] = c_exp(a[i, j] - lse[i, 0]) * dy[i, 0]
    return out_arr


def pair_logits(double[:, ::1] h, double[:, ::1] w):
    """L[u, v] = sum_j h[u, j] * h[v, j] * w[j]; bitwise symmetric."""
    cdef Py_ssize_t n = h.shape[0], d = h.shape[1]
    out_arr = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t u, v, j
    cdef double acc
    with nogil:
        for u in range(n):
            for v in range(n):
                acc = 0.0
                for j in range(d):
                    acc += (h[u, j] * h[v, j]) * w[j, 0]
                out[u, v] = acc
    return out_arr


def fill_uniform(uint64_t[::1] state, double[::1] out):
    """xoshiro256** fill of [0, 1) doubles; updates state in place."""
    cdef uint64_t s0 = state[0], s1 = state[1], s2 = state[2], s3 = state[3]
    cdef uint64_t r, t, x
    cdef Py_ssize_t n = out.shape[0]
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            x = s1 * <uint64_t>5
            r = ((x << 7) | (x >> 57)) * <uint64_t>9
            t = s1 << 17
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = (s3 << 45) | (s3 >> 19)
            out[i] = <double>(r >> 11) * _INV_2_53
    state[0] = s0
    state[1] = s1
    state[2] = s2
    state[3] = s3
