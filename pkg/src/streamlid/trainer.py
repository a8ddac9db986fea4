"""Desk-scale training of the pooling attention and classifier head.

The encoder is frozen: utterances enter as precomputed embedding streams
(or features run through the encoder once). Each utterance contributes one
training instance, the pooled vector after its final step, scored with
softmax cross entropy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classifier import HeadParams, PROB_FLOOR, softmax
from .errors import DegenerateDataError, InvalidInputError
from .pooling import AttentionParams, PoolingMode, final_pooled, pooling_gradients


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    steps: int = 200
    batch_size: int = 10**9  # full batch unless smaller
    seed: int = 0
    train_sigma_path: bool = True
    optimizer: str = "gd"  # "gd" or "adam"
    mode: PoolingMode = PoolingMode.WEIGHTED_MEAN
    hidden_dim: int = 256

    def __post_init__(self):
        self.mode = PoolingMode(self.mode)
        if self.learning_rate < 0 or self.steps < 1 or self.batch_size < 1:
            raise InvalidInputError("learning_rate must be >= 0, steps and batch_size >= 1")
        if self.optimizer not in ("gd", "adam"):
            raise InvalidInputError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class LabeledUtterance:
    embeddings: np.ndarray  # (T, D)
    truth_index: int
    utterance_id: int | str = 0

    def __post_init__(self):
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if len(self.embeddings) == 0:
            raise InvalidInputError(f"utterance {self.utterance_id!r} has no embeddings")


@dataclass
class TrainResult:
    attention: AttentionParams
    head: HeadParams
    loss_curve: list = field(default_factory=list)

    def loss_csv(self) -> str:
        rows = ["step,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(self.loss_curve)]
        return "\n".join(rows) + "\n"


def prepare_embeddings(features_list, weights, config):
    """Run the frozen encoder over each feature matrix."""
    from .encoder import encode_sequence
    return [encode_sequence(f, weights, config) for f in features_list]


# ---------------------------------------------------------------------------
# forward / backward

def _head_forward(x, head):
    z1 = x @ head.hidden_weight + head.hidden_bias
    a = np.maximum(z1, 0.0)
    probs = softmax(a @ head.out_weight + head.out_bias, axis=-1)
    return z1, a, probs


def batch_loss(batch, attention, head, mode, train_sigma_path=True) -> float:
    """Mean cross entropy of final-step posteriors over ``batch``."""
    sigma_eps = PoolingMode(mode).with_std and train_sigma_path
    x = np.stack([final_pooled(u.embeddings, attention, mode, sigma_eps) for u in batch])
    _, _, probs = _head_forward(x, head)
    truth = np.array([u.truth_index for u in batch])
    return float(np.mean(-np.log(np.maximum(probs[np.arange(len(batch)), truth], PROB_FLOOR))))


def loss_and_gradients(batch, attention, head, mode, train_sigma_path=True):
    """Mean cross entropy and its gradients.

    Returns ``(loss, grads)`` with ``grads`` keyed like the parameters:
    ``hidden_weight, hidden_bias, out_weight, out_bias, att_weight, att_bias``.
    When ``train_sigma_path`` is false the std half of the pooled vector is
    treated as a constant input for the attention gradient.
    """
    mode = PoolingMode(mode)
    n = len(batch)
    sigma_eps = mode.with_std and train_sigma_path
    x = np.stack([final_pooled(u.embeddings, attention, mode, sigma_eps) for u in batch])
    truth = np.array([u.truth_index for u in batch])
    z1, a, probs = _head_forward(x, head)
    loss = float(np.mean(-np.log(np.maximum(probs[np.arange(n), truth], PROB_FLOOR))))

    dlogits = probs.copy()
    dlogits[np.arange(n), truth] -= 1.0
    dlogits /= n
    grads = {
        "out_weight": a.T @ dlogits,
        "out_bias": dlogits.sum(axis=0),
    }
    dz1 = (dlogits @ head.out_weight.T) * (z1 > 0)
    grads["hidden_weight"] = x.T @ dz1
    grads["hidden_bias"] = dz1.sum(axis=0)
    dx = dz1 @ head.hidden_weight.T

    D = attention.weight_vector.shape[0]
    gw = np.zeros(D)
    gb = 0.0
    if mode.weighted:
        for i, u in enumerate(batch):
            g = dx[i]
            if mode.with_std and not train_sigma_path:
                g = g.copy()
                g[D:] = 0.0
            dw, db = pooling_gradients(u.embeddings, attention, mode, g)
            gw += dw
            gb += db
    grads["att_weight"] = gw
    grads["att_bias"] = gb
    return loss, grads


# ---------------------------------------------------------------------------
# parameter vector helpers

_ORDER = ("hidden_weight", "hidden_bias", "out_weight", "out_bias", "att_weight", "att_bias")


def _flatten(attention, head):
    return np.concatenate([
        head.hidden_weight.ravel(), head.hidden_bias, head.out_weight.ravel(), head.out_bias,
        attention.weight_vector, [attention.bias]])


def _unflatten(vec, attention, head):
    parts = []
    offset = 0
    for arr in (head.hidden_weight, head.hidden_bias, head.out_weight, head.out_bias,
                attention.weight_vector):
        parts.append(vec[offset:offset + arr.size].reshape(arr.shape))
        offset += arr.size
    new_head = HeadParams(*parts[:4])
    return AttentionParams(parts[4], float(vec[offset])), new_head


def _flatten_grads(grads):
    return np.concatenate([np.ravel(grads[k]) for k in _ORDER])


# ---------------------------------------------------------------------------
# training

def _check_data(data, num_languages):
    if not data:
        raise InvalidInputError("no training data")
    labels = {u.truth_index for u in data}
    if any(not 0 <= y < num_languages for y in labels):
        raise InvalidInputError("truth index outside the language table")
    if len(labels) < 2:
        raise DegenerateDataError("training data covers a single class")


def train_head(data, config: TrainConfig, num_languages: int, attention: AttentionParams | None = None,
               head: HeadParams | None = None) -> TrainResult:
    """Train attention + head by (mini-batch) gradient descent or Adam.

    Initialization, when not supplied: zero attention params (uniform
    weights, i.e. the naive mean at step 0) and a seeded random head.
    """
    _check_data(data, num_languages)
    mode = config.mode
    dim = data[0].embeddings.shape[1]
    pool_dim = mode.output_dim(dim)
    if attention is None:
        attention = AttentionParams.zeros(dim)
    if head is None:
        head = HeadParams.random(pool_dim, num_languages, seed=config.seed, hidden=config.hidden_dim)
    attention, head = attention.copy(), head.copy()

    rng = np.random.default_rng(config.seed)
    theta = _flatten(attention, head)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    n = len(data)
    full_batch = config.batch_size >= n
    curve = []
    order = np.arange(n)
    cursor = n
    for step in range(config.steps):
        if full_batch:
            batch = data
        else:
            if cursor + config.batch_size > n:
                order = rng.permutation(n)
                cursor = 0
            batch = [data[i] for i in order[cursor:cursor + config.batch_size]]
            cursor += config.batch_size
        loss, grads = loss_and_gradients(batch, attention, head, mode, config.train_sigma_path)
        curve.append(loss)
        g = _flatten_grads(grads)
        if not mode.weighted:
            g[-(dim + 1):] = 0.0
        if config.optimizer == "adam":
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            mhat = m / (1 - beta1 ** (step + 1))
            vhat = v / (1 - beta2 ** (step + 1))
            theta = theta - config.learning_rate * mhat / (np.sqrt(vhat) + adam_eps)
        else:
            theta = theta - config.learning_rate * g
        attention, head = _unflatten(theta, attention, head)
    return TrainResult(attention, head, curve)


def predict(data, attention, head, mode) -> np.ndarray:
    """Argmax language of the final-step posterior for each utterance."""
    x = np.stack([final_pooled(u.embeddings, attention, mode) for u in data])
    _, _, probs = _head_forward(x, head)
    return probs.argmax(axis=1)


def accuracy(data, attention, head, mode) -> float:
    pred = predict(data, attention, head, mode)
    return float(np.mean(pred == np.array([u.truth_index for u in data])))


# ---------------------------------------------------------------------------
# gradient check

@dataclass
class GradientInstance:
    batch: list
    attention: AttentionParams
    head: HeadParams
    mode: PoolingMode
    train_sigma_path: bool = True


def gradient_check(instance: GradientInstance, step_size: float = 1e-4, max_coords: int | None = None,
                   groups=None, seed: int = 0, abs_floor: float = 1e-6):
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, abs_floor)``.
    ``groups`` restricts the check to named parameter groups (default: all
    trainable ones for the mode); ``max_coords`` samples a random subset of
    at least 100 coordinates.
    """
    mode = PoolingMode(instance.mode)
    if groups is None:
        detached_std = mode.with_std and not instance.train_sigma_path
        groups = _ORDER if mode.weighted and not detached_std else _ORDER[:4]
    _, grads = loss_and_gradients(instance.batch, instance.attention, instance.head, mode,
                                  instance.train_sigma_path)
    analytic = _flatten_grads(grads)
    theta = _flatten(instance.attention, instance.head)

    sizes = [np.size(grads[k]) for k in _ORDER]
    starts = np.concatenate([[0], np.cumsum(sizes)])
    coords = np.concatenate([np.arange(starts[i], starts[i + 1])
                             for i, k in enumerate(_ORDER) if k in groups])
    if max_coords is not None and len(coords) > max(max_coords, 100):
        rng = np.random.default_rng(seed)
        coords = np.sort(rng.choice(coords, size=max(max_coords, 100), replace=False))

    def loss_at(vec):
        att, head = _unflatten(vec, instance.attention, instance.head)
        return batch_loss(instance.batch, att, head, mode, instance.train_sigma_path)

    worst = 0.0
    for c in coords:
        plus = theta.copy()
        plus[c] += step_size
        minus = theta.copy()
        minus[c] -= step_size
        numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * step_size)
        a = analytic[c]
        err = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
        worst = max(worst, err)
    return worst
