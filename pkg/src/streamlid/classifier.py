"""Feed-forward language classifier over pooled vectors."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError

HIDDEN_DIM = 256
PROB_FLOOR = 1e-12


@dataclass
class LanguageTable:
    codes: list

    def __post_init__(self):
        self.codes = [str(c) for c in self.codes]
        if len(self.codes) < 2:
            raise ConfigurationError("a language table needs at least 2 languages")
        if len(set(self.codes)) != len(self.codes):
            raise ConfigurationError("language codes must be unique")

    def __len__(self):
        return len(self.codes)

    def index(self, code: str) -> int:
        try:
            return self.codes.index(code)
        except ValueError:
            raise InvalidInputError(f"unknown language code {code!r}") from None

    def checksum(self) -> str:
        return hashlib.sha256("\n".join(self.codes).encode("utf-8")).hexdigest()[:16]

    def to_text(self) -> str:
        return "\n".join(self.codes) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LanguageTable":
        return cls([ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")])

    @classmethod
    def read(cls, path) -> "LanguageTable":
        return cls.from_text(Path(path).read_text())


@dataclass
class HeadParams:
    hidden_weight: np.ndarray  # (pool_dim, hidden)
    hidden_bias: np.ndarray
    out_weight: np.ndarray  # (hidden, K)
    out_bias: np.ndarray

    def __post_init__(self):
        for name in ("hidden_weight", "hidden_bias", "out_weight", "out_bias"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        hw, hb, ow, ob = self.hidden_weight, self.hidden_bias, self.out_weight, self.out_bias
        if hw.ndim != 2 or ow.ndim != 2 or hb.shape != (hw.shape[1],) or \
                ow.shape[0] != hw.shape[1] or ob.shape != (ow.shape[1],):
            raise ConfigurationError(
                f"inconsistent head shapes: hidden {hw.shape}/{hb.shape}, out {ow.shape}/{ob.shape}")

    @property
    def pool_dim(self) -> int:
        return self.hidden_weight.shape[0]

    @property
    def num_languages(self) -> int:
        return self.out_weight.shape[1]

    @classmethod
    def zeros(cls, pool_dim: int, num_languages: int, hidden: int = HIDDEN_DIM) -> "HeadParams":
        return cls(np.zeros((pool_dim, hidden)), np.zeros(hidden),
                   np.zeros((hidden, num_languages)), np.zeros(num_languages))

    @classmethod
    def random(cls, pool_dim: int, num_languages: int, seed: int = 0,
               hidden: int = HIDDEN_DIM) -> "HeadParams":
        rng = np.random.default_rng(seed)
        b1 = np.sqrt(6.0 / (pool_dim + hidden))
        b2 = np.sqrt(6.0 / (hidden + num_languages))
        return cls(rng.uniform(-b1, b1, (pool_dim, hidden)), np.zeros(hidden),
                   rng.uniform(-b2, b2, (hidden, num_languages)), np.zeros(num_languages))

    def copy(self) -> "HeadParams":
        return HeadParams(self.hidden_weight.copy(), self.hidden_bias.copy(),
                          self.out_weight.copy(), self.out_bias.copy())


@dataclass
class Posterior:
    probs: np.ndarray
    step: int = 0

    @property
    def top(self) -> int:
        return int(np.argmax(self.probs))


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def head_logits(pooled, params: HeadParams) -> np.ndarray:
    """Logits for one pooled vector ``(pool_dim,)`` or a batch ``(n, pool_dim)``."""
    x = np.asarray(pooled, dtype=np.float64)
    if x.shape[-1] != params.pool_dim:
        raise ConfigurationError(f"pooled dim {x.shape[-1]} does not match head input {params.pool_dim}")
    hidden = np.maximum(x @ params.hidden_weight + params.hidden_bias, 0.0)
    return hidden @ params.out_weight + params.out_bias


def classify(pooled, params: HeadParams, step: int = 0) -> Posterior:
    """Posterior over languages for a pooled vector (array or ``PooledVector``)."""
    if hasattr(pooled, "as_vector"):
        pooled = pooled.as_vector()
    return Posterior(softmax(head_logits(pooled, params)), step)


def classify_batch(pooled, params: HeadParams) -> np.ndarray:
    return softmax(head_logits(pooled, params), axis=-1)


def cross_entropy(posterior, truth_index: int) -> float:
    probs = posterior.probs if isinstance(posterior, Posterior) else np.asarray(posterior)
    if not 0 <= truth_index < len(probs):
        raise InvalidInputError(f"truth index {truth_index} out of range for {len(probs)} languages")
    return float(-np.log(max(probs[truth_index], PROB_FLOOR)))
