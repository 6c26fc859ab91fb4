# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled Matern 5/2 kernels; same signatures as the numpy fallback."""

import numpy as np
from libc.math cimport exp, sqrt

cdef double SQRT5 = sqrt(5.0)


def matern52_cov(double[:, ::1] X1, double[:, ::1] X2, double[::1] lengthscales, double signal_var):
    cdef Py_ssize_t n1 = X1.shape[0], n2 = X2.shape[0], d = X1.shape[1]
    cdef Py_ssize_t i, j, a
    cdef double r, t
    out = np.empty((n1, n2))
    cdef double[:, ::1] K = out
    for i in range(n1):
        for j in range(n2):
            r = 0.0
            for a in range(d):
                t = (X1[i, a] - X2[j, a]) / lengthscales[a]
                r += t * t
            r = sqrt(r)
            K[i, j] = signal_var * (1.0 + SQRT5 * r + 5.0 / 3.0 * r * r) * exp(-SQRT5 * r)
    return out


def matern52_grad(double[::1] x, double[:, ::1] X, double[::1] lengthscales, double signal_var):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, a
    cdef double r, t, g
    out = np.empty((n, d))
    cdef double[:, ::1] G = out
    for i in range(n):
        r = 0.0
        for a in range(d):
            t = (x[a] - X[i, a]) / lengthscales[a]
            r += t * t
        r = sqrt(r)
        g = -5.0 / 3.0 * signal_var * (1.0 + SQRT5 * r) * exp(-SQRT5 * r)
        for a in range(d):
            G[i, a] = g * (x[a] - X[i, a]) / (lengthscales[a] * lengthscales[a])
    return out


def matern52_mean_hessian(double[::1] x, double[:, ::1] X, double[::1] alpha,
                          double[::1] lengthscales, double signal_var):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, a, b
    cdef double r, t, e, g, c
    out = np.zeros((d, d))
    cdef double[:, ::1] H = out
    cdef double[::1] delta = np.empty(d)
    for i in range(n):
        r = 0.0
        for a in range(d):
            t = (x[a] - X[i, a]) / lengthscales[a]
            r += t * t
            delta[a] = (x[a] - X[i, a]) / (lengthscales[a] * lengthscales[a])
        r = sqrt(r)
        e = exp(-SQRT5 * r)
        g = -5.0 / 3.0 * signal_var * (1.0 + SQRT5 * r) * e * alpha[i]
        c = 25.0 / 3.0 * signal_var * e * alpha[i]
        for a in range(d):
            H[a, a] += g / (lengthscales[a] * lengthscales[a])
            for b in range(d):
                H[a, b] += c * delta[a] * delta[b]
    return out


def matern52_lengthscale_grads(double[:, ::1] X, double[::1] lengthscales, double signal_var):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, j, a
    cdef double r, t, g
    out = np.empty((d, n, n))
    cdef double[:, :, ::1] D = out
    for i in range(n):
        for j in range(i, n):
            r = 0.0
            for a in range(d):
                t = (X[i, a] - X[j, a]) / lengthscales[a]
                r += t * t
            r = sqrt(r)
            g = -5.0 / 3.0 * signal_var * (1.0 + SQRT5 * r) * exp(-SQRT5 * r)
            for a in range(d):
                t = (X[i, a] - X[j, a]) / lengthscales[a]
                D[a, i, j] = -g * t * t
                D[a, j, i] = D[a, i, j]
    return out
