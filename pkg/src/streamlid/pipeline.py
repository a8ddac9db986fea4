"""End-to-end model bundle and streaming inference.

A :class:`LangIdModel` groups everything stored in one container: frontend
and encoder configs, encoder weights, pooling attention, classifier head and
the language table. :func:`run_streams` drives any number of independent
streams step by step (each with its own encoder and pooling state) and emits
one JSON line per stream step.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .adaptation import AdaptationParams, DomainRegistry, adapt_posterior
from .classifier import HeadParams, LanguageTable, classify_batch
from .confidence import ConfidenceModel, ConfidenceTracker, FeatureConfig
from .encoder import (ConformerConfig, EncoderWeights, StreamingEncoder, encode_sequence,
                      expected_shapes, init_random_weights)
from .errors import ConfigurationError
from .evaluation import SwitchDetector
from .frontend import AudioSegment, FrontendConfig, extract_features
from .model_io import ModelContainer, build_dataclass
from .pooling import AttentionParams, PoolingMode, StreamingPooler, pool_stream_matrix

ATTENTION_WEIGHT = "pooling/attention/weight"
ATTENTION_BIAS = "pooling/attention/bias"
HEAD_TENSORS = ("hidden_weight", "hidden_bias", "out_weight", "out_bias")
UNTRAINED_HEAD_SCALE = 0.01


def _f32(x):
    return np.asarray(x, dtype=np.float32).astype(np.float64)


@dataclass
class LangIdModel:
    languages: LanguageTable
    conformer: ConformerConfig
    encoder: EncoderWeights
    attention: AttentionParams
    head: HeadParams
    pooling_mode: PoolingMode = PoolingMode.WEIGHTED_MEAN
    frontend: FrontendConfig = field(default_factory=FrontendConfig)

    def __post_init__(self):
        self.pooling_mode = PoolingMode(self.pooling_mode)
        self.encoder.validate(self.conformer)
        if self.attention.weight_vector.shape != (self.conformer.model_dim,):
            raise ConfigurationError("attention params do not match model_dim")
        if self.head.pool_dim != self.pooling_mode.output_dim(self.conformer.model_dim):
            raise ConfigurationError("head input dim does not match the pooling mode")
        if self.head.num_languages != len(self.languages):
            raise ConfigurationError("head output dim does not match the language table")
        if self.frontend.feature_dim != self.conformer.input_dim:
            raise ConfigurationError("frontend feature dim does not match encoder input dim")

    # -- serialization -----------------------------------------------------

    def to_container(self) -> ModelContainer:
        c = ModelContainer(metadata={
            "languages": list(self.languages.codes),
            "conformer": asdict(self.conformer),
            "frontend": asdict(self.frontend),
            "pooling_mode": self.pooling_mode.value,
        })
        for name in expected_shapes(self.conformer):
            c.add(name, self.encoder[name])
        c.add(ATTENTION_WEIGHT, self.attention.weight_vector)
        c.add(ATTENTION_BIAS, np.float32(self.attention.bias))
        for name in HEAD_TENSORS:
            c.add(f"head/{name}", getattr(self.head, name))
        return c

    @classmethod
    def from_container(cls, c: ModelContainer) -> "LangIdModel":
        meta = c.metadata
        try:
            conformer = ConformerConfig(**meta["conformer"])
            frontend = FrontendConfig(**meta["frontend"])
            languages = LanguageTable(meta["languages"])
            mode = PoolingMode(meta["pooling_mode"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"container metadata incomplete: {exc}") from exc
        encoder = EncoderWeights({name: c.get(name) for name in expected_shapes(conformer)})
        attention = AttentionParams(_f32(c.get(ATTENTION_WEIGHT)), float(c.get(ATTENTION_BIAS).reshape(-1)[0]))
        head = HeadParams(*[_f32(c.get(f"head/{n}")) for n in HEAD_TENSORS])
        return cls(languages, conformer, encoder, attention, head, mode, frontend)

    def save(self, path) -> None:
        self.to_container().save(path)

    @classmethod
    def load(cls, path) -> "LangIdModel":
        return cls.from_container(ModelContainer.load(path))

    def with_trained(self, attention: AttentionParams, head: HeadParams) -> "LangIdModel":
        """Copy with new pooling/head params rounded to their stored float32 values."""
        attention = AttentionParams(_f32(attention.weight_vector), float(np.float32(attention.bias)))
        head = HeadParams(*[_f32(getattr(head, n)) for n in HEAD_TENSORS])
        return LangIdModel(self.languages, self.conformer, self.encoder, attention, head,
                           self.pooling_mode, self.frontend)

    # -- batch helpers -----------------------------------------------------

    def features(self, audio: AudioSegment, agc: bool = True) -> np.ndarray:
        return extract_features(audio, self.frontend, agc=agc)

    def embeddings(self, features) -> np.ndarray:
        return encode_sequence(features, self.encoder, self.conformer)

    def posteriors_from_embeddings(self, embeddings) -> np.ndarray:
        """Posterior at every step of an embedding stream, ``(T, K)``."""
        pooled = pool_stream_matrix(embeddings, self.attention, self.pooling_mode)
        return classify_batch(pooled, self.head)

    def posteriors(self, features) -> np.ndarray:
        return self.posteriors_from_embeddings(self.embeddings(features))


def init_random_model(languages: LanguageTable, conformer: ConformerConfig = ConformerConfig(),
                      seed: int = 0, pooling_mode: PoolingMode = PoolingMode.WEIGHTED_MEAN,
                      frontend: FrontendConfig = FrontendConfig()) -> LangIdModel:
    """Untrained model: random encoder, zero attention, near-silent random head.

    The head's output layer is scaled down so that an untrained model emits
    near-uniform posteriors.
    """
    mode = PoolingMode(pooling_mode)
    encoder = init_random_weights(conformer, seed)
    head = HeadParams.random(mode.output_dim(conformer.model_dim), len(languages), seed=seed + 1)
    head.out_weight = head.out_weight * UNTRAINED_HEAD_SCALE
    model = LangIdModel(languages, conformer, encoder, AttentionParams.zeros(conformer.model_dim),
                        head, mode, frontend)
    return model.with_trained(model.attention, model.head)


# ---------------------------------------------------------------------------
# streaming

def _top(probs, languages, k=5):
    order = np.argsort(-probs, kind="stable")[:k]
    return [[languages.codes[i], float(probs[i])] for i in order]


class StreamSession:
    """Streaming state for one audio stream."""

    def __init__(self, model: LangIdModel, adaptation: AdaptationParams,
                 confidence: ConfidenceModel, tau: float, feature_config: FeatureConfig = FeatureConfig()):
        self.model = model
        self.adaptation = adaptation
        self.encoder = StreamingEncoder(model.encoder, model.conformer)
        self.pooler = StreamingPooler(model.attention, model.pooling_mode, model.conformer.model_dim)
        self.tracker = ConfidenceTracker(confidence, feature_config)
        self.switches = SwitchDetector(tau)
        self.step = 0

    def push(self, frames) -> list:
        """Feed feature frames; returns one result dict per completed step."""
        results = []
        for emb in self.encoder.push(frames):
            pooled = self.pooler.push(emb[None, :])[0]
            probs = classify_batch(pooled[None, :], self.model.head)[0]
            adapted = adapt_posterior(probs, self.adaptation)
            feats, conf = self.tracker.push(adapted if self.tracker.config.use_adapted else probs)
            event = self.switches.push(self.step, adapted, conf)
            results.append({"step": self.step, "probs": probs, "adapted": adapted,
                            "confidence": conf, "continuity": feats.continuity, "event": event})
            self.step += 1
        return results


@dataclass
class PipelineOutput:
    lines: list
    latencies_s: list

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def _format(stream, r, languages, model):
    ev = r["event"]
    events = []
    if ev is not None:
        events.append({"step": ev.step,
                       "from": None if ev.previous_language is None else languages.codes[ev.previous_language],
                       "to": languages.codes[ev.new_language], "confidence": ev.confidence})
    frames_per_step = 2
    rec = {
        "stream": stream,
        "step": r["step"],
        "time_ms": (r["step"] + 1) * frames_per_step * model.frontend.output_step_ms,
        "posterior_top5": _top(r["probs"], languages),
        "adapted_top5": _top(r["adapted"], languages),
        "confidence": float(r["confidence"]),
        "switch_events": events,
    }
    return json.dumps(rec, sort_keys=True)


def run_streams(feature_streams, model: LangIdModel, adaptation: AdaptationParams | None = None,
                confidence: ConfidenceModel | None = None, tau: float = 0.5,
                feature_config: FeatureConfig = FeatureConfig()) -> PipelineOutput:
    """Interleave several streams step by step, each with isolated state.

    Latency of the post-frontend path is measured per step but kept out of
    the JSON lines so that output is deterministic.
    """
    adaptation = adaptation or AdaptationParams.identity(len(model.languages))
    confidence = confidence or ConfidenceModel.zeros()
    sessions = [StreamSession(model, adaptation, confidence, tau, feature_config) for _ in feature_streams]
    feats = [np.asarray(f, dtype=np.float32) for f in feature_streams]
    n_steps = max((len(f) // 2 for f in feats), default=0)
    lines, latencies = [], []
    for step in range(n_steps):
        for s, (session, f) in enumerate(zip(sessions, feats)):
            if 2 * step + 2 > len(f):
                continue
            t0 = time.perf_counter()
            results = session.push(f[2 * step:2 * step + 2])
            latencies.append(time.perf_counter() - t0)
            for r in results:
                lines.append(_format(s, r, model.languages, model))
    return PipelineOutput(lines, latencies)


def run_pipeline(audio: AudioSegment | list, model: LangIdModel, domain_id: str | None = None,
                 registry: DomainRegistry | None = None, confidence: ConfidenceModel | None = None,
                 tau: float | None = None, agc: bool = True,
                 feature_config: FeatureConfig = FeatureConfig()) -> PipelineOutput:
    """Audio in, JSON lines out: frontend, then streaming encoder/pooling/head,
    domain adaptation, confidence and switch events.

    ``audio`` may be a list of segments to run as independent streams.
    """
    segments = audio if isinstance(audio, (list, tuple)) else [audio]
    adaptation = registry.lookup(domain_id) if registry is not None else None
    confidence = confidence or ConfidenceModel.zeros()
    tau = confidence.threshold if tau is None else tau
    features = [model.features(seg, agc=agc) for seg in segments]
    return run_streams(features, model, adaptation, confidence, tau, feature_config)
