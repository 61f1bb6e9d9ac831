# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; see ``_kernels_py`` for the reference numpy versions."""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, erfc, log, INFINITY

cnp.import_array()

cdef double SQRT1_2 = 0.7071067811865476
LOG_FLOOR = -745.0
cdef double C_LOG_FLOOR = -745.0


def soft_quantize_forward(z, a, b, c):
    zf = np.asarray(z, dtype=np.float64)
    shape = zf.shape
    cdef const double[::1] zv = np.ascontiguousarray(zf.reshape(-1))
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    out = np.empty(zv.shape[0], dtype=np.float64)
    cdef double[::1] ov = out
    cdef Py_ssize_t n = zv.shape[0], k = av.shape[0], i, j
    cdef double acc, x
    with nogil:
        for i in range(n):
            x = zv[i]
            acc = 0.0
            for j in range(k):
                acc += av[j] * tanh(cv[j] * x - bv[j])
            ov[i] = acc
    return out.reshape(shape)


def soft_quantize_backward(z, g, a, b, c):
    zf = np.asarray(z, dtype=np.float64)
    shape = zf.shape
    cdef const double[::1] zv = np.ascontiguousarray(zf.reshape(-1))
    cdef const double[::1] gv = np.ascontiguousarray(np.asarray(g, dtype=np.float64).reshape(-1))
    cdef const double[::1] av = np.ascontiguousarray(a, dtype=np.float64)
    cdef const double[::1] bv = np.ascontiguousarray(b, dtype=np.float64)
    cdef const double[::1] cv = np.ascontiguousarray(c, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], k = av.shape[0], i, j
    if gv.shape[0] != n:
        raise ValueError("upstream gradient shape does not match input")
    dz = np.empty(n, dtype=np.float64)
    da = np.zeros(k, dtype=np.float64)
    dsech = np.zeros(k, dtype=np.float64)
    cdef double[::1] dzv = dz
    cdef double[::1] dav = da
    cdef double[::1] dsv = dsech
    cdef double t, s2, acc, gi
    with nogil:
        for i in range(n):
            gi = gv[i]
            acc = 0.0
            for j in range(k):
                t = tanh(cv[j] * zv[i] - bv[j])
                s2 = 1.0 - t * t
                acc += av[j] * cv[j] * s2
                dav[j] += gi * t
                dsv[j] += gi * s2
            dzv[i] = gi * acc
    db = -np.asarray(a, dtype=np.float64) * dsech
    return dz.reshape(shape), da, db


cdef inline double _log_cell(double lo, double hi) nogil:
    cdef double p
    if lo > 0:
        p = 0.5 * (erfc(lo * SQRT1_2) - erfc(hi * SQRT1_2))
    else:
        p = 0.5 * (erfc(-hi * SQRT1_2) - erfc(-lo * SQRT1_2))
    if p <= 0.0:
        return C_LOG_FLOOR
    p = log(p)
    if p < C_LOG_FLOOR:
        return C_LOG_FLOOR
    return p


def cell_loglik(lower, upper, means, double sigma):
    cdef const double[:, ::1] lv = np.ascontiguousarray(lower, dtype=np.float64)
    cdef const double[:, ::1] uv = np.ascontiguousarray(upper, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(means, dtype=np.float64)
    cdef Py_ssize_t t_count = lv.shape[0], n = lv.shape[1], k_count = mv.shape[0]
    cdef Py_ssize_t t, k, i
    out = np.empty((t_count, k_count), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef double acc, inv = 1.0 / sigma
    with nogil:
        for t in range(t_count):
            for k in range(k_count):
                acc = 0.0
                for i in range(n):
                    acc += _log_cell((lv[t, i] - mv[k, i]) * inv, (uv[t, i] - mv[k, i]) * inv)
                ov[t, k] = acc
    return out


def nearest_candidate(x, means):
    cdef const double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[:, ::1] mv = np.ascontiguousarray(means, dtype=np.float64)
    cdef Py_ssize_t t_count = xv.shape[0], n = xv.shape[1], k_count = mv.shape[0]
    cdef Py_ssize_t t, k, i, best_k
    out = np.empty(t_count, dtype=np.intp)
    cdef Py_ssize_t[::1] ov = out
    cdef double d, diff, best
    with nogil:
        for t in range(t_count):
            best = INFINITY
            best_k = 0
            for k in range(k_count):
                d = 0.0
                for i in range(n):
                    diff = xv[t, i] - mv[k, i]
                    d += diff * diff
                if d < best:
                    best = d
                    best_k = k
            ov[t] = best_k
    return out
