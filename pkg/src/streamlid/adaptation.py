"""Post-hoc domain adaptation of posteriors.

A domain is described by two K-vectors ``a`` and ``b``; adapted posteriors
are ``softmax(a * p + b)``. They are fit on a domain dev set by minimizing

    mean cross entropy + w_reg * (||a - 1|| + ||b||)

and selected per request from a registry whose default entry is the
identity transform (``a = 1, b = 0``).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import PROB_FLOOR, LanguageTable, Posterior, softmax
from .errors import ConfigurationError, InvalidInputError

DEFAULT_DOMAIN = "default"
REGISTRY_FORMAT = "streamlid-domain-registry"
REGISTRY_VERSION = 1


@dataclass
class AdaptationParams:
    a: np.ndarray
    b: np.ndarray
    domain_id: str = DEFAULT_DOMAIN

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.a.shape != self.b.shape or self.a.ndim != 1:
            raise InvalidInputError("a and b must be vectors of equal length")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise InvalidInputError("adaptation params must be finite")

    @classmethod
    def identity(cls, num_languages: int, domain_id: str = DEFAULT_DOMAIN) -> "AdaptationParams":
        return cls(np.ones(num_languages), np.zeros(num_languages), domain_id)

    @property
    def num_parameters(self) -> int:
        return self.a.size + self.b.size


@dataclass
class AdaptObjectiveConfig:
    w_reg: float = 0.1
    learning_rate: float = 1.0
    steps: int = 5000
    seed: int = 0
    norm: str = "l2"  # "l2" or "l1"
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.w_reg < 0:
            raise InvalidInputError("w_reg must be non-negative")
        if self.learning_rate <= 0 or self.steps < 1:
            raise InvalidInputError("learning_rate must be positive and steps >= 1")
        if self.norm not in ("l1", "l2"):
            raise InvalidInputError(f"unknown regularizer norm {self.norm!r}")


def adapt_posterior(p, params: AdaptationParams):
    """``softmax(a * p + b)``; accepts a ``Posterior``, a vector or a ``(n, K)`` batch."""
    step = None
    if isinstance(p, Posterior):
        step, p = p.step, p.probs
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != params.a.shape[0]:
        raise InvalidInputError(f"posterior has {p.shape[-1]} classes, params have {params.a.shape[0]}")
    out = softmax(params.a * p + params.b, axis=-1)
    return out if step is None else Posterior(out, step)


def _norm(x, kind):
    return float(np.sum(np.abs(x))) if kind == "l1" else float(np.linalg.norm(x))


def _prox(x, thresh, kind):
    """Proximal operator of ``thresh * ||x||``."""
    if kind == "l1":
        return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)
    n = np.linalg.norm(x)
    if n <= thresh:
        return np.zeros_like(x)
    return x * (1.0 - thresh / n)


def _as_arrays(dev):
    if len(dev) == 0:
        raise InvalidInputError("empty dev set")
    probs = np.stack([np.asarray(p.probs if isinstance(p, Posterior) else p, dtype=np.float64)
                      for p, _ in dev])
    truth = np.array([int(y) for _, y in dev])
    if np.any(truth < 0) or np.any(truth >= probs.shape[1]):
        raise InvalidInputError("truth index outside the language table")
    return probs, truth


def adaptation_objective(probs, truth, a, b, w_reg, norm="l2") -> float:
    q = softmax(a * probs + b, axis=-1)
    ce = -np.log(np.maximum(q[np.arange(len(truth)), truth], PROB_FLOOR))
    return float(np.mean(ce) + w_reg * (_norm(a - 1.0, norm) + _norm(b, norm)))


def train_adaptation(dev, config: AdaptObjectiveConfig = AdaptObjectiveConfig(),
                     domain_id: str = DEFAULT_DOMAIN) -> AdaptationParams:
    """Fit ``a, b`` on ``(posterior, truth_index)`` pairs by proximal gradient descent.

    The cross-entropy part takes a plain gradient step; the regularizer is
    applied through its proximal map, which keeps the identity an exact fixed
    point once ``w_reg`` dominates. Stops when the objective improves by less
    than ``config.tolerance`` or the step budget runs out.
    """
    probs, truth = _as_arrays(dev)
    n, k = probs.shape
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), truth] = 1.0
    lr, w_reg, kind = config.learning_rate, config.w_reg, config.norm

    a, b = np.ones(k), np.zeros(k)
    best = adaptation_objective(probs, truth, a, b, w_reg, kind)
    best_ab = (a, b)
    prev = best
    for _ in range(config.steps):
        q = softmax(a * probs + b, axis=-1)
        dz = (q - onehot) / n
        grad_a = np.sum(dz * probs, axis=0)
        grad_b = np.sum(dz, axis=0)
        a = 1.0 + _prox(a - lr * grad_a - 1.0, lr * w_reg, kind)
        b = _prox(b - lr * grad_b, lr * w_reg, kind)
        obj = adaptation_objective(probs, truth, a, b, w_reg, kind)
        if obj < best:
            best, best_ab = obj, (a, b)
        if abs(prev - obj) < config.tolerance:
            break
        prev = obj
    return AdaptationParams(best_ab[0].copy(), best_ab[1].copy(), domain_id)


class DomainRegistry:
    """Domain id -> adaptation params, falling back to the identity transform.

    Lookups are lock-free reads of an immutable mapping; updates swap in a
    new mapping under a lock (single writer, many readers).
    """

    def __init__(self, languages: LanguageTable, entries: dict | None = None):
        self.languages = languages
        self._lock = threading.Lock()
        self._entries = dict(entries or {})
        self._default = AdaptationParams.identity(len(languages))

    def register(self, params: AdaptationParams) -> None:
        if params.a.shape[0] != len(self.languages):
            raise InvalidInputError("adaptation params do not match the language table")
        with self._lock:
            entries = dict(self._entries)
            entries[params.domain_id] = params
            self._entries = entries

    def lookup(self, domain_id: str | None) -> AdaptationParams:
        entry = self._entries.get(domain_id) if domain_id is not None else None
        return entry if entry is not None else self._default

    def domains(self) -> list:
        return sorted(self._entries)

    def to_json(self) -> str:
        doc = {
            "format": REGISTRY_FORMAT,
            "version": REGISTRY_VERSION,
            "languages": list(self.languages.codes),
            "languages_checksum": self.languages.checksum(),
            "domains": {d: {"a": self._entries[d].a.tolist(), "b": self._entries[d].b.tolist()}
                        for d in sorted(self._entries)},
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, languages: LanguageTable | None = None) -> "DomainRegistry":
        doc = json.loads(text)
        if doc.get("format") != REGISTRY_FORMAT:
            raise ConfigurationError("not a domain registry document")
        stored = LanguageTable(doc["languages"])
        if stored.checksum() != doc["languages_checksum"]:
            raise ConfigurationError("registry language checksum is inconsistent")
        if languages is not None and languages.checksum() != stored.checksum():
            raise ConfigurationError("registry was trained for a different language table")
        reg = cls(stored)
        for domain, ab in doc["domains"].items():
            reg.register(AdaptationParams(ab["a"], ab["b"], domain))
        return reg

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path, languages: LanguageTable | None = None) -> "DomainRegistry":
        return cls.from_json(Path(path).read_text(), languages)


def lookup_domain(registry: DomainRegistry, domain_id: str | None) -> AdaptationParams:
    return registry.lookup(domain_id)
