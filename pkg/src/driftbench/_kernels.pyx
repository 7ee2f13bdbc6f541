# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for prototype scoring and running updates.

Semantics match ``_kernels_py`` exactly; see that module for the contract.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp

cnp.import_array()


cdef inline double _norm(const double[::1] v, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        s += v[k] * v[k]
    return sqrt(s)


cdef inline double _row_norm(const double[:, ::1] P, Py_ssize_t r, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        s += P[r, k] * P[r, k]
    return sqrt(s)


cdef inline double _cos(const double[::1] e, double ne,
                        const double[:, ::1] P, Py_ssize_t r, Py_ssize_t n) noexcept nogil:
    cdef double d = 0.0, npr
    cdef Py_ssize_t k
    npr = _row_norm(P, r, n)
    if ne == 0.0 or npr == 0.0:
        return 0.0
    for k in range(n):
        d += e[k] * P[r, k]
    return d / (ne * npr)


def cosine_scores(const double[::1] e, const double[:, ::1] P):
    cdef Py_ssize_t K = P.shape[0], n = e.shape[0], r
    if K and P.shape[1] != n:
        raise ValueError("dimension mismatch")
    out = np.empty(K, dtype=np.float64)
    cdef double[::1] o = out
    cdef double ne
    with nogil:
        ne = _norm(e, n)
        for r in range(K):
            o[r] = _cos(e, ne, P, r, n)
    return out


def cosine_argmax(const double[:, ::1] E, const double[:, ::1] P):
    cdef Py_ssize_t m = E.shape[0], K = P.shape[0], n = E.shape[1], i, r
    if K and P.shape[1] != n:
        raise ValueError("dimension mismatch")
    out = np.full(m, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef double ne, s, best
    cdef Py_ssize_t arg
    if K == 0:
        return out
    with nogil:
        for i in range(m):
            ne = _norm(E[i], n)
            best = _cos(E[i], ne, P, 0, n)
            arg = 0
            for r in range(1, K):
                s = _cos(E[i], ne, P, r, n)
                if s > best:
                    best = s
                    arg = r
            o[i] = arg
    return out


cdef inline double _lin(const double[::1] e, const double[:, ::1] W,
                        Py_ssize_t r, Py_ssize_t n) noexcept nogil:
    cdef double s = 0.0
    cdef Py_ssize_t k
    for k in range(n):
        s += W[r, k] * e[k]
    return s


def linear_scores(const double[::1] e, const double[:, ::1] W):
    cdef Py_ssize_t K = W.shape[0], n = e.shape[0], r
    if K and W.shape[1] != n:
        raise ValueError("dimension mismatch")
    out = np.empty(K, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for r in range(K):
            o[r] = _lin(e, W, r, n)
    return out


def linear_argmax(const double[:, ::1] E, const double[:, ::1] W):
    cdef Py_ssize_t m = E.shape[0], K = W.shape[0], n = E.shape[1], i, r
    if K and W.shape[1] != n:
        raise ValueError("dimension mismatch")
    out = np.full(m, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef double s, best
    cdef Py_ssize_t arg
    if K == 0:
        return out
    with nogil:
        for i in range(m):
            best = _lin(E[i], W, 0, n)
            arg = 0
            for r in range(1, K):
                s = _lin(E[i], W, r, n)
                if s > best:
                    best = s
                    arg = r
            o[i] = arg
    return out


def mean_update(double[::1] p, const double[::1] f, long count):
    cdef Py_ssize_t n = p.shape[0], k
    cdef double c = <double>count, c1 = <double>(count + 1)
    with nogil:
        for k in range(n):
            p[k] = (f[k] + c * p[k]) / c1


def gated_update(double[::1] p, const double[::1] f, double alpha):
    cdef Py_ssize_t n = p.shape[0], k
    cdef double keep = 1.0 - alpha
    with nogil:
        for k in range(n):
            p[k] = keep * p[k] + alpha * f[k]


def sgd_softmax_step(double[:, ::1] W, const double[::1] e, const double[::1] grad_logits, double lr):
    cdef Py_ssize_t K = W.shape[0], n = W.shape[1], r, k
    cdef double g
    with nogil:
        for r in range(K):
            g = lr * grad_logits[r]
            for k in range(n):
                W[r, k] -= g * e[k]
