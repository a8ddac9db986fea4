import numpy as np
import pytest

from streamlid import kernels
from conftest import BACKENDS


def brute_pool(h, w):
    mu = np.empty_like(h)
    sd = np.empty_like(h)
    for t in range(len(h)):
        ws = w[:t + 1, None]
        m = (ws * h[:t + 1]).sum(0) / ws.sum()
        mu[t] = m
        sd[t] = np.sqrt(np.maximum((ws * h[:t + 1] ** 2).sum(0) / ws.sum() - m * m, 0))
    return mu, sd


def test_recurrent_pool_matches_brute_force(backend, rng):
    h = rng.normal(size=(40, 7))
    w = rng.uniform(0.1, 1.0, size=40)
    mu, sd, eta, acc, accsq = backend.recurrent_pool(h, w, 0.0, np.zeros(7), np.zeros(7), True)
    bmu, bsd = brute_pool(h, w)
    np.testing.assert_allclose(mu, bmu, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(sd, bsd, rtol=1e-9, atol=1e-9)
    assert eta == pytest.approx(w.sum())
    np.testing.assert_allclose(acc, (w[:, None] * h).sum(0))


def test_recurrent_pool_resumes_from_state(backend, rng):
    h = rng.normal(size=(30, 5))
    w = rng.uniform(0.1, 1.0, size=30)
    full = backend.recurrent_pool(h, w, 0.0, np.zeros(5), np.zeros(5), True)
    first = backend.recurrent_pool(h[:11], w[:11], 0.0, np.zeros(5), np.zeros(5), True)
    second = backend.recurrent_pool(h[11:], w[11:], first[2], first[3], first[4], True)
    np.testing.assert_array_equal(np.vstack([first[0], second[0]]), full[0])
    np.testing.assert_array_equal(second[3], full[3])


def test_recurrent_pool_without_std(backend, rng):
    h = rng.normal(size=(5, 3))
    mu, sd, *_ = backend.recurrent_pool(h, np.ones(5), 0.0, np.zeros(3), np.zeros(3), False)
    assert sd is None
    np.testing.assert_allclose(mu[-1], h.mean(0))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_causal_conv_matches_direct_sum(backend, rng, dtype):
    T, D, K = 12, 4, 5
    x = rng.normal(size=(T, D)).astype(dtype)
    ker = rng.normal(size=(K, D)).astype(dtype)
    bias = rng.normal(size=D).astype(dtype)
    hist = rng.normal(size=(K - 1, D)).astype(dtype)
    y = backend.causal_depthwise_conv(x, ker, bias, hist)
    seq = np.vstack([hist, x]).astype(np.float64)
    expected = np.empty((T, D))
    for t in range(T):
        for d in range(D):
            expected[t, d] = bias[d] + sum(ker[k, d] * seq[t + k, d] for k in range(K))
    assert y.dtype == dtype
    np.testing.assert_allclose(y, expected, rtol=1e-5, atol=1e-5)


def test_causal_conv_short_history_is_zero_padded(backend, rng):
    x = rng.normal(size=(6, 2))
    ker = rng.normal(size=(4, 2))
    bias = np.zeros(2)
    short = backend.causal_depthwise_conv(x, ker, bias, np.zeros((0, 2)))
    padded = backend.causal_depthwise_conv(x, ker, bias, np.zeros((3, 2)))
    np.testing.assert_allclose(short, padded)


def test_continuity_run(backend):
    top = np.array([0, 0, 1, 1, 1, 0, 2, 2], dtype=np.int64)
    np.testing.assert_array_equal(backend.continuity_run(top), [1, 2, 1, 2, 3, 1, 1, 2])
    assert len(backend.continuity_run(np.zeros(0, dtype=np.int64))) == 0


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled kernels not built")
def test_backends_agree(rng):
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    h = rng.normal(size=(200, 16))
    w = rng.uniform(0.01, 1.0, size=200)
    a = py.recurrent_pool(h, w, 0.0, np.zeros(16), np.zeros(16), True)
    b = cy.recurrent_pool(h, w, 0.0, np.zeros(16), np.zeros(16), True)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-13)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-9, atol=1e-12)
    x = rng.normal(size=(50, 8)).astype(np.float32)
    ker = rng.normal(size=(32, 8)).astype(np.float32)
    bias = rng.normal(size=8).astype(np.float32)
    hist = np.zeros((31, 8), np.float32)
    np.testing.assert_allclose(py.causal_depthwise_conv(x, ker, bias, hist),
                               cy.causal_depthwise_conv(x, ker, bias, hist), rtol=1e-5, atol=1e-5)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
