# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled row kernels; same contracts as ``exitbert._pykernels``."""
import numpy as np

from libc.math cimport erf, exp, log, sqrt

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double mx, s
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                y[i, j] = exp(x[i, j] - mx)
                s += y[i, j]
            for j in range(m):
                y[i, j] = y[i, j] / s
    return out


def softmax_rows_backward(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double dot
    with nogil:
        for i in range(n):
            dot = 0.0
            for j in range(m):
                dot += g[i, j] * y[i, j]
            for j in range(m):
                dx[i, j] = y[i, j] * (g[i, j] - dot)
    return out


def log_softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double mx, s, lse
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(m):
                s += exp(x[i, j] - mx)
            lse = log(s)
            for j in range(m):
                y[i, j] = x[i, j] - mx - lse
    return out


def layer_norm_rows(const double[:, ::1] x, const double[::1] gamma,
                    const double[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    xhat_arr = np.empty((n, m), dtype=np.float64)
    inv_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] y = out
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] inv_std = inv_arr
    cdef double mean, var, d, inv
    with nogil:
        for i in range(n):
            mean = 0.0
            for j in range(m):
                mean += x[i, j]
            mean = mean / m
            var = 0.0
            for j in range(m):
                d = x[i, j] - mean
                var += d * d
            var = var / m
            inv = 1.0 / sqrt(var + eps)
            inv_std[i] = inv
            for j in range(m):
                d = (x[i, j] - mean) * inv
                xhat[i, j] = d
                y[i, j] = d * gamma[j] + beta[j]
    return out, xhat_arr, inv_arr


def layer_norm_rows_backward(const double[:, ::1] g, const double[:, ::1] xhat,
                             const double[::1] inv_std, const double[::1] gamma):
    cdef Py_ssize_t n = g.shape[0], m = g.shape[1], i, j
    dx_arr = np.empty((n, m), dtype=np.float64)
    dgamma_arr = np.zeros(m, dtype=np.float64)
    dbeta_arr = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double s1, s2, dxh, scale
    with nogil:
        for i in range(n):
            s1 = 0.0
            s2 = 0.0
            for j in range(m):
                dxh = g[i, j] * gamma[j]
                s1 += dxh
                s2 += dxh * xhat[i, j]
                dgamma[j] += g[i, j] * xhat[i, j]
                dbeta[j] += g[i, j]
            scale = inv_std[i] / m
            for j in range(m):
                dxh = g[i, j] * gamma[j]
                dx[i, j] = scale * (m * dxh - s1 - xhat[i, j] * s2)
    return dx_arr, dgamma_arr, dbeta_arr


def gelu(const double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] y = out
    with nogil:
        for i in range(n):
            for j in range(m):
                y[i, j] = 0.5 * x[i, j] * (1.0 + erf(x[i, j] * INV_SQRT2))
    return out


def gelu_backward(const double[:, ::1] x, const double[:, ::1] g):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] dx = out
    cdef double v
    with nogil:
        for i in range(n):
            for j in range(m):
                v = x[i, j]
                dx[i, j] = g[i, j] * (0.5 * (1.0 + erf(v * INV_SQRT2))
                                      + v * INV_SQRT_2PI * exp(-0.5 * v * v))
    return out
