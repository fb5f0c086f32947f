# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Fused loops for the pairwise diagonal-Gaussian log-density.

Same contract as ``_pairwise_py``; avoids the n x m x d temporaries.
"""
import numpy as np
from libc.math cimport exp, log, M_PI


def pair_logprob(const double[:, ::1] mu, const double[:, ::1] logvar,
                 const double[:, ::1] y):
    cdef Py_ssize_t n = mu.shape[0], m = y.shape[0], d = mu.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, diff, norm
    cdef double log2pi = log(2.0 * M_PI)
    out_arr = np.empty((n, m), dtype=np.float64)
    prec_arr = np.empty((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double[:, ::1] prec = prec_arr
    with nogil:
        for i in range(n):
            norm = d * log2pi
            for k in range(d):
                prec[i, k] = exp(-logvar[i, k])
                norm = norm + logvar[i, k]
            norm = -0.5 * norm
            for j in range(m):
                acc = 0.0
                for k in range(d):
                    diff = y[j, k] - mu[i, k]
                    acc = acc + diff * diff * prec[i, k]
                out[i, j] = norm - 0.5 * acc
    return out_arr


def pair_logprob_backward(const double[:, ::1] grad, const double[:, ::1] mu,
                          const double[:, ::1] logvar, const double[:, ::1] y):
    cdef Py_ssize_t n = mu.shape[0], m = y.shape[0], d = mu.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double g, gsum, diff, w, p
    d_mu_arr = np.zeros((n, d), dtype=np.float64)
    d_lv_arr = np.zeros((n, d), dtype=np.float64)
    d_y_arr = np.zeros((m, d), dtype=np.float64)
    cdef double[:, ::1] d_mu = d_mu_arr
    cdef double[:, ::1] d_lv = d_lv_arr
    cdef double[:, ::1] d_y = d_y_arr
    cdef double[::1] prec = np.empty(d, dtype=np.float64)
    cdef double[::1] quad = np.empty(d, dtype=np.float64)
    with nogil:
        for i in range(n):
            for k in range(d):
                prec[k] = exp(-logvar[i, k])
                quad[k] = 0.0
            gsum = 0.0
            for j in range(m):
                g = grad[i, j]
                gsum = gsum + g
                for k in range(d):
                    diff = y[j, k] - mu[i, k]
                    w = g * diff * prec[k]
                    d_mu[i, k] = d_mu[i, k] + w
                    d_y[j, k] = d_y[j, k] - w
                    quad[k] = quad[k] + g * diff * diff
            for k in range(d):
                d_lv[i, k] = -0.5 * gsum + 0.5 * prec[k] * quad[k]
    return d_mu_arr, d_lv_arr, d_y_arr
