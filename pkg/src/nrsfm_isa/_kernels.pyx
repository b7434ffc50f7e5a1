# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner kernels. Same contracts as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def isa_sweep(double[:, ::1] W, double[:, ::1] Z, int K, double eps):
    cdef Py_ssize_t n = Z.shape[0], J = Z.shape[1]
    cdef Py_ssize_t i, c, j, k
    cdef double[:, ::1] acc = np.zeros((n, n))
    cdef double[::1] acc2 = np.zeros(n)
    cdef double[::1] y = np.empty(n)
    cdef double[::1] gy = np.empty(n)
    cdef double u, root, g, gp, s, loglik = 0.0
    out = np.empty((n, n))
    cdef double[:, ::1] o = out
    with nogil:
        for j in range(J):
            for i in range(n):
                s = 0.0
                for c in range(n):
                    s = s + W[i, c] * Z[c, j]
                y[i] = s
            for k in range(K):
                u = y[3 * k] * y[3 * k] + y[3 * k + 1] * y[3 * k + 1] \
                    + y[3 * k + 2] * y[3 * k + 2] + eps
                root = sqrt(u)
                loglik = loglik - root
                g = -0.5 / root
                gp = 0.25 / (u * root)
                for i in range(3 * k, 3 * k + 3):
                    gy[i] = y[i] * g
                    acc2[i] = acc2[i] + g + 2.0 * y[i] * y[i] * gp
            for i in range(n):
                for c in range(n):
                    acc[i, c] = acc[i, c] + gy[i] * Z[c, j]
        for i in range(n):
            for c in range(n):
                o[i, c] = acc[i, c] / J - acc2[i] / J * W[i, c]
    return out, loglik


def best_swap(double[:, ::1] C2, int K):
    cdef Py_ssize_t n = C2.shape[0]
    cdef Py_ssize_t a, b, c, ba, bb
    cdef double[:, ::1] S = np.zeros((n, K))
    cdef double[::1] own = np.empty(n)
    cdef double best = -INFINITY, gain
    cdef Py_ssize_t best_a = 0, best_b = 0
    with nogil:
        for a in range(n):
            for c in range(n):
                S[a, c // 3] += C2[a, c]
        for a in range(n):
            own[a] = S[a, a // 3] - C2[a, a]
        for a in range(n):
            ba = a // 3
            for b in range(a + 1, n):
                bb = b // 3
                if ba == bb:
                    continue
                gain = 2.0 * ((S[a, bb] - C2[a, b]) + (S[b, ba] - C2[b, a])
                              - own[a] - own[b])
                if gain > best:
                    best = gain
                    best_a = a
                    best_b = b
    return best, best_a, best_b
