"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def recurrent_pool(h, w, eta0, sum0, sumsq0, with_std):
    T, D = h.shape
    eta = float(eta0)
    acc = np.array(sum0, dtype=np.float64, copy=True)
    accsq = np.array(sumsq0, dtype=np.float64, copy=True)
    mu = np.empty((T, D), dtype=np.float64)
    sigma = np.empty((T, D), dtype=np.float64) if with_std else None
    for t in range(T):
        wt = w[t]
        eta = eta + wt
        acc += wt * h[t]
        accsq += wt * (h[t] * h[t])
        m = acc / eta
        mu[t] = m
        if with_std:
            sigma[t] = np.sqrt(np.maximum(accsq / eta - m * m, 0.0))
    return mu, sigma, eta, acc, accsq


def causal_depthwise_conv(x, kernel, bias, history):
    K = kernel.shape[0]
    T, D = x.shape
    pad = K - 1 - history.shape[0]
    parts = [history, x]
    if pad > 0:
        parts.insert(0, np.zeros((pad, D), dtype=x.dtype))
    xp = np.concatenate(parts, axis=0)
    out = np.broadcast_to(bias, (T, D)).copy()
    for k in range(K):
        out += kernel[k] * xp[k:k + T]
    return out


def continuity_run(top):
    top = np.asarray(top)
    out = np.empty(len(top), dtype=np.int64)
    run = 0
    for i in range(len(top)):
        run = run + 1 if i and top[i] == top[i - 1] else 1
        out[i] = run
    return out
