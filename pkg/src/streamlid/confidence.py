"""Confidence of the top language from the posterior stream.

Four features per step ``t``:

1. top probability ``max(p_t)``
2. gap between the top two probabilities
3. negentropy ``ln K - H(p_t)`` (natural log)
4. continuity, the number of consecutive steps ending at ``t`` whose top
   language equals that of step ``t``

are combined as ``sigmoid(alpha . c + beta)``. The five parameters are fit by
logistic regression on dev-set correctness labels, and a decision threshold
is read off the DET curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .classifier import Posterior
from .errors import DegenerateDataError, InvalidInputError

CONTINUITY_CAP = 1000
NORM_CAP = 100.0


@dataclass(frozen=True)
class FeatureConfig:
    continuity_cap: int = CONTINUITY_CAP
    normalize_continuity: bool = True
    # features from domain-adapted posteriors; false uses the raw head output
    use_adapted: bool = True


@dataclass(frozen=True)
class ConfidenceFeatures:
    top_prob: float
    prob_delta: float
    negentropy: float
    continuity: int

    def as_vector(self, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
        return feature_matrix(
            np.array([[self.top_prob, self.prob_delta, self.negentropy, self.continuity]]),
            config)[0]


@dataclass
class ConfidenceModel:
    alphas: np.ndarray
    beta: float = 0.0
    threshold: float = 0.5

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=np.float64)
        if self.alphas.shape != (4,):
            raise InvalidInputError("a confidence model has exactly 4 feature weights")
        self.beta = float(self.beta)
        self.threshold = float(self.threshold)

    @classmethod
    def zeros(cls) -> "ConfidenceModel":
        return cls(np.zeros(4), 0.0, 0.5)

    def to_text(self) -> str:
        """Six whitespace-separated fields: alpha1..alpha4 beta tau."""
        return " ".join(repr(float(v)) for v in (*self.alphas, self.beta, self.threshold)) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConfidenceModel":
        fields = text.split()
        if len(fields) != 6:
            raise InvalidInputError(f"confidence record needs 6 fields, got {len(fields)}")
        vals = [float(f) for f in fields]
        return cls(vals[:4], vals[4], vals[5])

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path) -> "ConfidenceModel":
        return cls.from_text(Path(path).read_text())


def _as_probs(posteriors) -> np.ndarray:
    rows = [p.probs if isinstance(p, Posterior) else p for p in posteriors]
    probs = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if probs.size == 0:
        raise InvalidInputError("empty posterior stream")
    return probs


def _entropy(probs):
    safe = np.where(probs > 0, probs, 1.0)
    return -np.sum(probs * np.log(safe), axis=-1)


def feature_stream(posteriors) -> np.ndarray:
    """Raw features for every step, shape ``(T, 4)``; continuity is uncapped."""
    probs = _as_probs(posteriors)
    k = probs.shape[1]
    top2 = -np.sort(-probs, axis=1)[:, :2]
    c1 = top2[:, 0]
    c2 = top2[:, 0] - top2[:, 1]
    c3 = np.maximum(np.log(k) - _entropy(probs), 0.0)
    top = np.ascontiguousarray(np.argmax(probs, axis=1).astype(np.int64))
    c4 = kernels.continuity_run(top)
    return np.column_stack([c1, c2, c3, c4.astype(np.float64)])


def extract_features(posteriors) -> ConfidenceFeatures:
    """Features for the last step of a posterior stream."""
    row = feature_stream(posteriors)[-1]
    return ConfidenceFeatures(float(row[0]), float(row[1]), float(row[2]), int(row[3]))


def feature_matrix(raw, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    """Model inputs from raw features: continuity capped and optionally scaled to ``[0, 1]``."""
    x = np.array(raw, dtype=np.float64, copy=True)
    x[:, 3] = np.minimum(x[:, 3], config.continuity_cap)
    if config.normalize_continuity:
        x[:, 3] /= config.continuity_cap
    return x


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def confidence_score(features, model: ConfidenceModel, config: FeatureConfig = FeatureConfig()) -> float:
    """``sigmoid(alpha . c + beta)`` for one ``ConfidenceFeatures`` or model-ready vector."""
    x = features.as_vector(config) if isinstance(features, ConfidenceFeatures) else np.asarray(features)
    return float(_sigmoid(x @ model.alphas + model.beta))


def confidence_scores(raw_features, model: ConfidenceModel, config: FeatureConfig = FeatureConfig()) -> np.ndarray:
    return _sigmoid(feature_matrix(raw_features, config) @ model.alphas + model.beta)


def correctness_labels(posteriors, truth_index: int) -> np.ndarray:
    """1 where the top language of a step equals the truth."""
    return (np.argmax(_as_probs(posteriors), axis=1) == truth_index).astype(np.int64)


def log_loss(x, z, alphas, beta) -> float:
    logits = x @ alphas + beta
    # -[z log s + (1 - z) log(1 - s)] written stably
    return float(np.mean(np.logaddexp(0.0, logits) - z * logits))


@dataclass
class ConfidenceTrainConfig:
    steps: int = 20000
    learning_rate: float | None = None  # None: 1 / Lipschitz bound
    norm_cap: float = NORM_CAP
    tolerance: float = 1e-12
    seed: int = 0
    features: FeatureConfig = FeatureConfig()


def train_confidence(raw_features, labels, config: ConfidenceTrainConfig = ConfidenceTrainConfig(),
                     threshold: float = 0.5) -> ConfidenceModel:
    """Logistic regression by full-batch projected gradient descent from zero.

    The parameter vector is kept inside an L2 ball of radius
    ``config.norm_cap`` so that separable data still terminates.
    """
    z = np.asarray(labels, dtype=np.float64)
    raw = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))
    if raw.shape != (len(z), 4):
        raise InvalidInputError("need one 4-feature row per label")
    if not np.all((z == 0) | (z == 1)):
        raise InvalidInputError("labels must be 0/1")
    if z.min() == z.max():
        raise DegenerateDataError("dev set has a single correctness label")
    x = feature_matrix(raw, config.features)
    xa = np.column_stack([x, np.ones(len(x))])
    n = len(z)
    lr = config.learning_rate
    if lr is None:
        lipschitz = 0.25 * np.linalg.eigvalsh(xa.T @ xa / n).max()
        lr = 1.0 / lipschitz
    theta = np.zeros(5)
    prev = log_loss(x, z, theta[:4], theta[4])
    for _ in range(config.steps):
        s = _sigmoid(xa @ theta)
        theta = theta - lr * (xa.T @ (s - z) / n)
        norm = np.linalg.norm(theta)
        if norm > config.norm_cap:
            theta *= config.norm_cap / norm
        cur = log_loss(x, z, theta[:4], theta[4])
        if abs(prev - cur) < config.tolerance:
            break
        prev = cur
    return ConfidenceModel(theta[:4].copy(), float(theta[4]), threshold)


@dataclass
class DetCurve:
    thresholds: np.ndarray
    false_accept: np.ndarray
    false_reject: np.ndarray

    def to_csv(self) -> str:
        lines = ["threshold,fa,fr"]
        lines += [f"{t!r},{fa!r},{fr!r}" for t, fa, fr in
                  zip(self.thresholds.tolist(), self.false_accept.tolist(), self.false_reject.tolist())]
        return "\n".join(lines) + "\n"


def det_curve(scores, labels) -> DetCurve:
    """FA/FR at every distinct score used as threshold, plus one threshold above all scores.

    FA = fraction of incorrect (z=0) with score >= tau;
    FR = fraction of correct (z=1) with score < tau.
    """
    scores = np.asarray(scores, dtype=np.float64)
    z = np.asarray(labels)
    pos = np.sort(scores[z == 1])
    neg = np.sort(scores[z == 0])
    if len(pos) == 0 or len(neg) == 0:
        raise DegenerateDataError("DET curve needs both correct and incorrect samples")
    thresholds = np.append(np.unique(scores), np.inf)
    fa = 1.0 - np.searchsorted(neg, thresholds, side="left") / len(neg)
    fr = np.searchsorted(pos, thresholds, side="left") / len(pos)
    return DetCurve(thresholds, fa, fr)


def calibrate_threshold(scores, labels, rule: str = "eer", target_fa: float = 0.01):
    """Pick tau from the DET curve.

    ``rule="eer"`` minimizes ``|FA - FR|``; ``rule="max_fa"`` picks the lowest
    threshold with ``FA <= target_fa`` (the least false rejects under the
    false-accept budget). Returns ``(tau, curve)``.
    """
    curve = det_curve(scores, labels)
    if rule == "eer":
        i = int(np.argmin(np.abs(curve.false_accept - curve.false_reject)))
    elif rule == "max_fa":
        ok = np.flatnonzero(curve.false_accept <= target_fa)
        i = int(ok[0])
    else:
        raise InvalidInputError(f"unknown operating-point rule {rule!r}")
    return float(curve.thresholds[i]), curve


class ConfidenceTracker:
    """Per-stream feature extraction and scoring, one posterior at a time."""

    def __init__(self, model: ConfidenceModel, config: FeatureConfig = FeatureConfig()):
        self.model = model
        self.config = config
        self._last_top = None
        self._run = 0

    def push(self, probs) -> tuple:
        """Returns ``(ConfidenceFeatures, score)`` for the new step."""
        probs = np.asarray(probs, dtype=np.float64)
        top = int(np.argmax(probs))
        self._run = self._run + 1 if top == self._last_top else 1
        self._last_top = top
        row = feature_stream(probs[None, :])[0]
        feats = ConfidenceFeatures(float(row[0]), float(row[1]), float(row[2]), self._run)
        return feats, confidence_score(feats, self.model, self.config)
