"""Attentive temporal pooling in recurrent (streaming) form.

Each step gets a scalar attention weight ``w_t = sigmoid(v . h_t + c) + eps``.
The running statistics

    eta_t = eta_{t-1} + w_t
    A_t   = A_{t-1}   + w_t * h_t
    Q_t   = Q_{t-1}   + w_t * h_t**2

give the weighted mean ``A_t / eta_t`` and standard deviation
``sqrt(Q_t / eta_t - mean**2)`` at every step without revisiting the past.
Naive pooling modes use ``w_t = 1``.

Accumulators are float64 regardless of the embedding dtype.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyStreamError, InvalidInputError

ATTENTION_EPS = 1e-4
# added inside the sqrt when gradients flow through the std path
STD_GRAD_EPS = 1e-8


class PoolingMode(str, enum.Enum):
    MEAN = "mean"
    MEAN_STD = "mean_std"
    WEIGHTED_MEAN = "weighted_mean"
    WEIGHTED_MEAN_STD = "weighted_mean_std"

    @property
    def weighted(self) -> bool:
        return self in (PoolingMode.WEIGHTED_MEAN, PoolingMode.WEIGHTED_MEAN_STD)

    @property
    def with_std(self) -> bool:
        return self in (PoolingMode.MEAN_STD, PoolingMode.WEIGHTED_MEAN_STD)

    def output_dim(self, model_dim: int) -> int:
        return 2 * model_dim if self.with_std else model_dim


@dataclass
class AttentionParams:
    weight_vector: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.weight_vector = np.asarray(self.weight_vector, dtype=np.float64)
        self.bias = float(self.bias)

    @classmethod
    def zeros(cls, dim: int) -> "AttentionParams":
        return cls(np.zeros(dim), 0.0)

    def copy(self) -> "AttentionParams":
        return AttentionParams(self.weight_vector.copy(), self.bias)


@dataclass
class PoolingState:
    eta: float
    sum_vec: np.ndarray
    sumsq_vec: np.ndarray
    step: int = 0

    @classmethod
    def initial(cls, dim: int) -> "PoolingState":
        return cls(0.0, np.zeros(dim), np.zeros(dim), 0)


@dataclass
class PooledVector:
    mean: np.ndarray
    std: np.ndarray | None
    mode: PoolingMode

    def as_vector(self) -> np.ndarray:
        """Classifier input: mean, optionally concatenated with std."""
        if self.std is None:
            return self.mean
        return np.concatenate([self.mean, self.std])


def _sigmoid(z):
    # overflow-safe for large |z|
    return np.exp(-np.logaddexp(0.0, -z))


def attention_logits(h, params: AttentionParams) -> np.ndarray:
    return np.asarray(h, dtype=np.float64) @ params.weight_vector + params.bias


def attention_weight(h, params: AttentionParams) -> float:
    """``sigmoid(v . h + c) + eps`` for a single embedding."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != params.weight_vector.shape:
        raise InvalidInputError(
            f"embedding dim {h.shape} does not match attention params {params.weight_vector.shape}")
    return float(_sigmoid(attention_logits(h, params)) + ATTENTION_EPS)


def attention_weights(embeddings, params: AttentionParams | None, mode: PoolingMode) -> np.ndarray:
    """Per-step weights for a whole stream; ones for the naive modes."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if not PoolingMode(mode).weighted:
        return np.ones(len(embeddings))
    if embeddings.shape[1] != params.weight_vector.shape[0]:
        raise InvalidInputError("embedding dim does not match attention params")
    return _sigmoid(attention_logits(embeddings, params)) + ATTENTION_EPS


def update_statistics(state: PoolingState, h, w: float) -> PoolingState:
    """One step of the recurrence. Returns a new state."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != state.sum_vec.shape:
        raise InvalidInputError(f"embedding dim {h.shape} does not match state {state.sum_vec.shape}")
    if not w > 0:
        raise InvalidInputError(f"attention weight must be positive, got {w}")
    return PoolingState(
        eta=state.eta + w,
        sum_vec=state.sum_vec + w * h,
        sumsq_vec=state.sumsq_vec + w * (h * h),
        step=state.step + 1,
    )


def pooled_output(state: PoolingState, mode: PoolingMode) -> PooledVector:
    mode = PoolingMode(mode)
    if state.step == 0 or state.eta <= 0:
        raise EmptyStreamError("no steps accumulated yet")
    mean = state.sum_vec / state.eta
    std = None
    if mode.with_std:
        std = np.sqrt(np.maximum(state.sumsq_vec / state.eta - mean * mean, 0.0))
    return PooledVector(mean, std, mode)


def run_recurrence(embeddings, weights, state: PoolingState | None = None, with_std: bool = True):
    """Advance ``state`` over a block of steps using the active kernel backend.

    Returns ``(means, stds, new_state)``; ``stds`` is None when not requested.
    """
    h = np.ascontiguousarray(embeddings, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    if h.ndim != 2 or len(w) != len(h):
        raise InvalidInputError("embeddings must be (T, D) with one weight per step")
    if np.any(w <= 0):
        raise InvalidInputError("attention weights must be positive")
    if state is None:
        state = PoolingState.initial(h.shape[1])
    mu, sigma, eta, acc, accsq = kernels.recurrent_pool(
        h, w, float(state.eta), np.ascontiguousarray(state.sum_vec),
        np.ascontiguousarray(state.sumsq_vec), bool(with_std))
    return mu, sigma, PoolingState(eta, acc, accsq, state.step + len(h))


def pool_stream(embeddings, params: AttentionParams | None, mode: PoolingMode) -> list[PooledVector]:
    """One pooled vector per input step, each from the state after that step."""
    mode = PoolingMode(mode)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or len(embeddings) == 0:
        raise InvalidInputError("pool_stream needs a non-empty (T, D) embedding sequence")
    w = attention_weights(embeddings, params, mode)
    mu, sigma, _ = run_recurrence(embeddings, w, with_std=mode.with_std)
    return [PooledVector(mu[t], None if sigma is None else sigma[t], mode) for t in range(len(mu))]


def pool_stream_matrix(embeddings, params: AttentionParams | None, mode: PoolingMode) -> np.ndarray:
    """Like :func:`pool_stream` but returns the stacked classifier inputs ``(T, pool_dim)``."""
    mode = PoolingMode(mode)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    w = attention_weights(embeddings, params, mode)
    mu, sigma, _ = run_recurrence(embeddings, w, with_std=mode.with_std)
    return mu if sigma is None else np.concatenate([mu, sigma], axis=1)


class StreamingPooler:
    """Stateful pooler for one stream."""

    def __init__(self, params: AttentionParams | None, mode: PoolingMode, dim: int):
        self.params = params
        self.mode = PoolingMode(mode)
        self.state = PoolingState.initial(dim)

    def push(self, embeddings) -> np.ndarray:
        embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
        w = attention_weights(embeddings, self.params, self.mode)
        mu, sigma, self.state = run_recurrence(embeddings, w, self.state, self.mode.with_std)
        return mu if sigma is None else np.concatenate([mu, sigma], axis=1)


def final_pooled(embeddings, params, mode, train_std_eps: bool = False):
    """Pooled vector after the last step, computed directly from batch sums.

    With ``train_std_eps`` the std is ``sqrt(var + STD_GRAD_EPS)`` so that it
    stays differentiable for constant streams.
    """
    mode = PoolingMode(mode)
    h = np.asarray(embeddings, dtype=np.float64)
    w = attention_weights(h, params, mode)
    eta = w.sum()
    mean = w @ h / eta
    if not mode.with_std:
        return mean
    var = np.maximum(w @ (h * h) / eta - mean * mean, 0.0)
    std = np.sqrt(var + STD_GRAD_EPS) if train_std_eps else np.sqrt(var)
    return np.concatenate([mean, std])


def pooling_gradients(embeddings, params: AttentionParams, mode: PoolingMode, loss_grad_at_output):
    """Gradient of a loss on the final pooled output with respect to the attention params.

    ``loss_grad_at_output`` is dL/d(pooled vector) (length ``pool_dim``). The
    std path uses ``sqrt(var + STD_GRAD_EPS)``, matching
    :func:`final_pooled` with ``train_std_eps=True``.

    Returns ``(grad_weight_vector, grad_bias)``; zero for naive modes.
    """
    mode = PoolingMode(mode)
    h = np.asarray(embeddings, dtype=np.float64)
    g = np.asarray(loss_grad_at_output, dtype=np.float64)
    D = h.shape[1]
    if not mode.weighted:
        return np.zeros(D), 0.0
    s = _sigmoid(attention_logits(h, params))
    w = s + ATTENTION_EPS
    eta = w.sum()
    mean = w @ h / eta
    centered = h - mean
    # dL/dw_s for every step s
    dldw = centered @ g[:D] / eta
    if mode.with_std:
        var = np.maximum(w @ (h * h) / eta - mean * mean, 0.0)
        std = np.sqrt(var + STD_GRAD_EPS)
        dvar_dw = (centered * centered - var) / eta
        dldw = dldw + dvar_dw @ (g[D:] / (2.0 * std))
    dlogit = dldw * s * (1.0 - s)
    return dlogit @ h, float(dlogit.sum())
