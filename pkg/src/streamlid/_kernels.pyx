# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


def recurrent_pool(const double[:, ::1] h, const double[::1] w,
                   double eta0, const double[::1] sum0, const double[::1] sumsq0,
                   bint with_std):
    """Run the weighted sufficient-statistic recurrence over ``T`` steps.

    Returns ``(mu, sigma, eta, sum_vec, sumsq_vec)`` where ``mu``/``sigma``
    hold one row per step and the trailing three are the final state.
    ``sigma`` is ``None`` when ``with_std`` is false.
    """
    cdef Py_ssize_t T = h.shape[0]
    cdef Py_ssize_t D = h.shape[1]
    cdef Py_ssize_t t, d
    cdef double eta = eta0, wt, hv, m, var

    acc_np = np.array(sum0, dtype=np.float64, copy=True)
    accsq_np = np.array(sumsq0, dtype=np.float64, copy=True)
    mu_np = np.empty((T, D), dtype=np.float64)
    cdef double[::1] acc = acc_np
    cdef double[::1] accsq = accsq_np
    cdef double[:, ::1] mu = mu_np
    cdef double[:, ::1] sigma
    if with_std:
        sigma_np = np.empty((T, D), dtype=np.float64)
        sigma = sigma_np
    else:
        sigma_np = None

    with nogil:
        for t in range(T):
            wt = w[t]
            eta = eta + wt
            for d in range(D):
                hv = h[t, d]
                acc[d] = acc[d] + wt * hv
                accsq[d] = accsq[d] + wt * (hv * hv)
                m = acc[d] / eta
                mu[t, d] = m
                if with_std:
                    var = accsq[d] / eta - m * m
                    if var < 0.0:
                        var = 0.0
                    sigma[t, d] = sqrt(var)
    return mu_np, sigma_np, eta, acc_np, accsq_np


def causal_depthwise_conv(const floating[:, ::1] x, const floating[:, ::1] kernel,
                          const floating[::1] bias, const floating[:, ::1] history):
    """Depthwise 1-D convolution with all taps on past/current frames.

    ``history`` holds the ``K - 1`` frames preceding ``x``; tap ``K - 1``
    multiplies the current frame.
    """
    cdef Py_ssize_t T = x.shape[0]
    cdef Py_ssize_t D = x.shape[1]
    cdef Py_ssize_t K = kernel.shape[0]
    cdef Py_ssize_t H = history.shape[0]
    cdef Py_ssize_t t, d, k, src
    cdef floating acc, v

    if floating is double:
        dtype = np.float64
    else:
        dtype = np.float32
    out_np = np.empty((T, D), dtype=dtype)
    cdef floating[:, ::1] out = out_np

    with nogil:
        for t in range(T):
            for d in range(D):
                acc = bias[d]
                for k in range(K):
                    # position in the virtual [history; x] sequence
                    src = t + k - (K - 1)
                    if src < 0:
                        if H + src < 0:
                            continue
                        v = history[H + src, d]
                    else:
                        v = x[src, d]
                    acc = acc + kernel[k, d] * v
                out[t, d] = acc
    return out_np


def continuity_run(const long long[::1] top):
    """Length of the run of equal values ending at each position."""
    cdef Py_ssize_t n = top.shape[0]
    cdef Py_ssize_t i
    out_np = np.empty(n, dtype=np.int64)
    cdef long long[::1] out = out_np
    if n == 0:
        return out_np
    with nogil:
        out[0] = 1
        for i in range(1, n):
            if top[i] == top[i - 1]:
                out[i] = out[i - 1] + 1
            else:
                out[i] = 1
    return out_np
