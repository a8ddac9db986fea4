"""Evaluation metrics, language-switch events and analytic FLOP counts."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import ConformerConfig
from .errors import InvalidInputError
from .frontend import FrontendConfig


@dataclass
class EvalRecord:
    utterance_id: object
    truth_index: int
    predicted_index: int
    posteriors: np.ndarray | None = None


def make_record(utterance_id, truth_index: int, posteriors, majority_vote: bool = False,
                keep_posteriors: bool = False) -> EvalRecord:
    """Score an utterance by its final-step posterior, or by majority vote over step argmaxes."""
    probs = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    if len(probs) == 0:
        raise InvalidInputError(f"utterance {utterance_id!r} has no posteriors")
    if majority_vote:
        votes = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])
        pred = int(np.argmax(votes))
    else:
        pred = int(np.argmax(probs[-1]))
    return EvalRecord(utterance_id, int(truth_index), pred, probs if keep_posteriors else None)


def per_language_counts(records) -> dict:
    """truth index -> (total, correct)."""
    counts = {}
    for r in records:
        total, correct = counts.get(r.truth_index, (0, 0))
        counts[r.truth_index] = (total + 1, correct + int(r.predicted_index == r.truth_index))
    return dict(sorted(counts.items()))


def per_language_accuracy(records) -> dict:
    """truth index -> fraction of its utterances predicted correctly (its recall)."""
    return {lang: correct / total for lang, (total, correct) in per_language_counts(records).items()}


def average_accuracy(per_language: dict) -> float:
    if not per_language:
        raise InvalidInputError("no languages to average")
    return math.fsum(per_language.values()) / len(per_language)


def total_accuracy(records) -> float:
    records = list(records)
    if not records:
        raise InvalidInputError("no records")
    return sum(r.predicted_index == r.truth_index for r in records) / len(records)


def results_csv(records, languages=None) -> str:
    """Per-language rows ``language,total,correct,accuracy`` then a summary line."""
    counts = per_language_counts(records)
    lines = ["language,total,correct,accuracy"]
    for lang, (total, correct) in counts.items():
        name = languages.codes[lang] if languages is not None else str(lang)
        lines.append(f"{name},{total},{correct},{correct / total!r}")
    per_lang = per_language_accuracy(records)
    lines.append(f"# average_accuracy={average_accuracy(per_lang)!r} total_accuracy={total_accuracy(records)!r}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SwitchEvent:
    step: int
    previous_language: int | None
    new_language: int
    confidence: float

    def to_json(self, languages=None) -> str:
        def name(i):
            if i is None:
                return None
            return languages.codes[i] if languages is not None else i
        return json.dumps({"step": self.step, "from": name(self.previous_language),
                           "to": name(self.new_language), "confidence": self.confidence})


class SwitchDetector:
    """Streaming switch-event emitter: fires when the top language differs from
    the last emitted one and confidence is at least ``tau``."""

    def __init__(self, tau: float):
        self.tau = tau
        self.current = None

    def push(self, step: int, probs, confidence: float) -> SwitchEvent | None:
        top = int(np.argmax(probs))
        if confidence >= self.tau and top != self.current:
            event = SwitchEvent(step, self.current, top, float(confidence))
            self.current = top
            return event
        return None


def emit_switch_events(posteriors, confidences, tau: float) -> list:
    posteriors = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    confidences = np.asarray(confidences, dtype=np.float64)
    if len(posteriors) != len(confidences):
        raise InvalidInputError("posterior and confidence streams must be aligned")
    det = SwitchDetector(tau)
    events = []
    for t in range(len(posteriors)):
        ev = det.push(t, posteriors[t], confidences[t])
        if ev is not None:
            events.append(ev)
    return events


# ---------------------------------------------------------------------------
# FLOP estimation
#
# Convention: a multiply-add counts as 2 FLOPs; elementwise ops count one
# FLOP per element per arithmetic op (layer norm 7/elem, sigmoid 4/elem,
# swish 5/elem, softmax 3/elem); the real FFT counts 2.5 N log2 N.

FLOP_CONVENTION = ("2 FLOPs per multiply-add; elementwise ops linear "
                   "(layernorm 7, sigmoid 4, swish 5, softmax 3 per element); rfft 2.5*N*log2(N)")


def _matmul(m, n):
    return 2 * m * n


def frontend_flops_per_frame(cfg: FrontendConfig) -> float:
    n = cfg.fft_size
    bins = n // 2 + 1
    return (cfg.frame_samples  # window
            + 2.5 * n * math.log2(n)  # rfft
            + 3 * bins  # power spectrum
            + _matmul(bins, cfg.num_mel_bins)
            + 2 * cfg.num_mel_bins)  # floor + log


def conformer_block_flops(d: int, cfg: ConformerConfig) -> float:
    """FLOPs for one frame through one conformer block of width ``d``."""
    e = cfg.feedforward_expansion * d
    ctx = cfg.attention_left_context + 1
    ffn = 7 * d + _matmul(d, e) + e + 5 * e + _matmul(e, d) + d + 2 * d  # LN, w1+b, swish, w2+b, half-step residual
    mhsa = (7 * d + 3 * (_matmul(d, d) + d)
            + _matmul(d, ctx) + cfg.num_heads * ctx  # scores + scaling
            + 3 * cfg.num_heads * ctx  # softmax
            + _matmul(ctx, d)  # weighted values
            + _matmul(d, d) + d + d)  # output projection + residual
    conv = (7 * d + _matmul(d, 2 * d) + 2 * d + 5 * d  # LN, pointwise, GLU
            + 2 * cfg.conv_span * d + d  # depthwise + bias
            + 4 * d + 5 * d  # batch norm, swish
            + _matmul(d, d) + d + d)
    return 2 * ffn + mhsa + conv + 7 * d


@dataclass
class FlopEstimate:
    per_second: float
    breakdown: dict = field(default_factory=dict)
    convention: str = FLOP_CONVENTION

    @property
    def gflops_per_second(self) -> float:
        return self.per_second / 1e9

    def to_json(self) -> str:
        return json.dumps({"gflop_per_second": self.gflops_per_second,
                           "breakdown_gflop_per_second": {k: v / 1e9 for k, v in self.breakdown.items()},
                           "convention": self.convention}, sort_keys=True)


def estimate_flops(config: ConformerConfig, frontend: FrontendConfig = FrontendConfig(),
                   num_languages: int = 65, pooling_with_std: bool = False,
                   include_frontend: bool = True, include_head: bool = True) -> FlopEstimate:
    """FLOPs to process one second of audio with a conformer configuration.

    A zero-layer config counts the frontend only.
    """
    raw_fps = 1000.0 / frontend.frame_step_ms
    feat_fps = raw_fps / frontend.subsample_factor
    parts = {}
    if include_frontend:
        parts["frontend"] = raw_fps * frontend_flops_per_frame(frontend)
    if config.num_layers:
        d = config.model_dim
        parts["input_projection"] = feat_fps * (_matmul(config.input_dim, d) + 2 * d)
        for layer in range(1, config.num_layers + 1):
            fps = feat_fps / config.layer_rate_divisor(layer)
            parts[f"layer_{layer:02d}"] = fps * conformer_block_flops(config.layer_dim(layer), config)
        step_fps = feat_fps / 2
        parts["projection"] = step_fps * (_matmul(2 * d, d) + 2 * d)
        if include_head:
            pool_dim = 2 * d if pooling_with_std else d
            pooling = 2 * d + 4 + 4 * d + (4 * d if pooling_with_std else d)
            head = _matmul(pool_dim, 256) + 2 * 256 + _matmul(256, num_languages) + 4 * num_languages
            parts["pooling"] = step_fps * pooling
            parts["head"] = step_fps * head
    return FlopEstimate(float(sum(parts.values())), parts)


@dataclass(frozen=True)
class LstmDescriptor:
    """Stacked LSTM, each layer but the last followed by a projection."""
    cell_dims: tuple = (1024, 768, 512, 256)
    projection_dims: tuple = (256, 256, 256)
    input_dim: int = 512


@dataclass(frozen=True)
class TransformerDescriptor:
    num_layers: int = 14
    model_dim: int = 144
    num_heads: int = 8
    feedforward_expansion: int = 4
    attention_context: int = 64
    input_dim: int = 512


def lstm_descriptor(first: int, last: int, num_layers: int, input_dim: int = 512) -> LstmDescriptor:
    """Pyramid LSTM with cell sizes decreasing linearly from ``first`` to ``last``."""
    cells = tuple(int(round(v)) for v in np.linspace(first, last, num_layers))
    return LstmDescriptor(cells, (last,) * (num_layers - 1), input_dim)


def estimate_baseline_flops(desc, frontend: FrontendConfig = FrontendConfig()) -> FlopEstimate:
    """FLOPs per second of audio for the LSTM / transformer baselines (30 ms frames)."""
    raw_fps = 1000.0 / frontend.frame_step_ms
    fps = raw_fps / frontend.subsample_factor
    parts = {"frontend": raw_fps * frontend_flops_per_frame(frontend)}
    if isinstance(desc, LstmDescriptor):
        m = desc.input_dim
        for i, n in enumerate(desc.cell_dims):
            p = desc.projection_dims[i] if i < len(desc.projection_dims) else 0
            recurrent = p if p else n
            flops = _matmul(m + recurrent, 4 * n) + 4 * n + 3 * 4 * n + 5 * n
            if p:
                flops += _matmul(n, p)
            parts[f"lstm_{i:02d}"] = fps * flops
            m = p if p else n
    elif isinstance(desc, TransformerDescriptor):
        d = desc.model_dim
        e = desc.feedforward_expansion * d
        ctx = desc.attention_context + 1
        parts["input_projection"] = fps * _matmul(desc.input_dim, d)
        per_layer = (7 * d + 4 * _matmul(d, d) + 2 * _matmul(d, ctx) + 4 * desc.num_heads * ctx
                     + 7 * d + _matmul(d, e) + 5 * e + _matmul(e, d) + 4 * d)
        for i in range(desc.num_layers):
            parts[f"transformer_{i:02d}"] = fps * per_layer
    else:
        raise InvalidInputError(f"unsupported baseline descriptor {type(desc).__name__}")
    return FlopEstimate(float(sum(parts.values())), parts)
