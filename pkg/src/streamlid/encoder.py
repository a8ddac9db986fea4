"""Causal conformer encoder with a streaming (step-of-2) inference path.

Topology: input projection + absolute sinusoidal positions, then
``num_layers`` conformer blocks. After block ``subsample_after_layer`` pairs
of frames are concatenated (stack-by-2, subsample-by-2), so the blocks up to
``projection_after_layer`` run at ``2 * model_dim``; a ReLU projection then
maps back to ``model_dim``. Each inference step consumes 2 input frames and
emits one embedding.

Every block is strictly causal: self-attention sees ``[t - left_context, t]``
and the depthwise convolution is left-padded. Batch evaluation runs one chunk
through empty caches; streaming feeds 2-frame chunks through persistent
per-layer caches, so both paths compute the same function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, InvalidInputError, UsageError

DTYPE = np.float32
LN_EPS = 1e-5
BN_EPS = 1e-3


@dataclass(frozen=True)
class ConformerConfig:
    num_layers: int = 12
    model_dim: int = 144
    num_heads: int = 8
    conv_span: int = 32
    subsample_after_layer: int = 3
    projection_after_layer: int = 4
    attention_left_context: int = 64
    feedforward_expansion: int = 4
    input_dim: int = 512

    def __post_init__(self):
        if self.model_dim <= 0 or self.num_heads <= 0:
            raise ConfigurationError("model_dim and num_heads must be positive")
        if self.model_dim % self.num_heads:
            raise ConfigurationError(
                f"model_dim={self.model_dim} not divisible by num_heads={self.num_heads}")
        if self.conv_span < 1 or self.attention_left_context < 1 or self.feedforward_expansion < 1:
            raise ConfigurationError("conv_span, attention_left_context and feedforward_expansion must be >= 1")
        if self.num_layers < 0:
            raise ConfigurationError("num_layers must be >= 0")
        # num_layers == 0 describes an encoder-less pipeline (FLOP accounting only)
        if self.num_layers and not (
                0 < self.subsample_after_layer < self.projection_after_layer <= self.num_layers):
            raise ConfigurationError(
                "need 0 < subsample_after_layer < projection_after_layer <= num_layers")

    def layer_dim(self, layer: int) -> int:
        """Width of 1-based ``layer``."""
        if self.subsample_after_layer < layer <= self.projection_after_layer:
            return 2 * self.model_dim
        return self.model_dim

    def layer_rate_divisor(self, layer: int) -> int:
        """1 for layers at the input frame rate, 2 after the subsampling stage."""
        return 1 if layer <= self.subsample_after_layer else 2


STANDARD_SIZES = {
    "small": ConformerConfig(model_dim=144),
    "medium": ConformerConfig(model_dim=256),
    "large": ConformerConfig(model_dim=512),
}


def receptive_field_frames(config: ConformerConfig) -> int:
    """Number of past input frames (beyond the current step) that can influence a step.

    Step ``t`` depends only on input frames ``[2t + 1 - R, 2t + 1]`` where ``R``
    is the returned value; there is no lookahead.
    """
    per_block = config.attention_left_context + config.conv_span - 1
    total = 1  # the first frame of the stacked pair
    for layer in range(1, config.num_layers + 1):
        total += per_block * config.layer_rate_divisor(layer)
    return total


# ---------------------------------------------------------------------------
# weights

def _block_shapes(d: int, cfg: ConformerConfig) -> dict:
    e = cfg.feedforward_expansion * d
    k = cfg.conv_span
    shapes = {}
    for ffn in ("ffn1", "ffn2"):
        shapes.update({
            f"{ffn}/ln_gain": (d,), f"{ffn}/ln_bias": (d,),
            f"{ffn}/w1": (d, e), f"{ffn}/b1": (e,),
            f"{ffn}/w2": (e, d), f"{ffn}/b2": (d,),
        })
    shapes.update({
        "mhsa/ln_gain": (d,), "mhsa/ln_bias": (d,),
        "mhsa/wq": (d, d), "mhsa/bq": (d,),
        "mhsa/wk": (d, d), "mhsa/bk": (d,),
        "mhsa/wv": (d, d), "mhsa/bv": (d,),
        "mhsa/wo": (d, d), "mhsa/bo": (d,),
        "conv/ln_gain": (d,), "conv/ln_bias": (d,),
        "conv/pw1_weight": (d, 2 * d), "conv/pw1_bias": (2 * d,),
        "conv/dw_kernel": (k, d), "conv/dw_bias": (d,),
        "conv/bn_mean": (d,), "conv/bn_var": (d,),
        "conv/bn_gain": (d,), "conv/bn_bias": (d,),
        "conv/pw2_weight": (d, d), "conv/pw2_bias": (d,),
        "final_ln_gain": (d,), "final_ln_bias": (d,),
    })
    return shapes


def layer_prefix(layer: int) -> str:
    return f"encoder/layer_{layer:02d}/"


def expected_shapes(config: ConformerConfig) -> dict:
    """Name -> shape for every tensor the encoder needs."""
    d = config.model_dim
    shapes = {"encoder/input/weight": (config.input_dim, d), "encoder/input/bias": (d,)}
    for layer in range(1, config.num_layers + 1):
        prefix = layer_prefix(layer)
        for name, shape in _block_shapes(config.layer_dim(layer), config).items():
            shapes[prefix + name] = shape
    if config.num_layers:
        shapes["encoder/projection/weight"] = (2 * d, d)
        shapes["encoder/projection/bias"] = (d,)
    return shapes


@dataclass
class EncoderWeights:
    """Named float32 tensors for one encoder configuration."""
    tensors: dict
    _layers: dict = field(default_factory=dict, repr=False, compare=False)

    def __getitem__(self, name):
        return self.tensors[name]

    def validate(self, config: ConformerConfig) -> None:
        for name, shape in expected_shapes(config).items():
            if name not in self.tensors:
                raise ConfigurationError(f"missing encoder tensor {name!r}")
            arr = self.tensors[name]
            if tuple(arr.shape) != tuple(shape):
                raise ConfigurationError(
                    f"encoder tensor {name!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"encoder tensor {name!r} has non-finite values")

    def layer(self, layer: int) -> dict:
        if layer not in self._layers:
            prefix = layer_prefix(layer)
            self._layers[layer] = {k[len(prefix):]: v for k, v in self.tensors.items()
                                   if k.startswith(prefix)}
        return self._layers[layer]


def _is_gain(name: str) -> bool:
    return name.endswith("ln_gain") or name.endswith("bn_gain") or name.endswith("bn_var")


def init_random_weights(config: ConformerConfig, seed: int = 0) -> EncoderWeights:
    """Glorot-uniform matrices, uniform depthwise kernels, zero biases, unit norms."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in expected_shapes(config).items():
        if _is_gain(name):
            arr = np.ones(shape)
        elif len(shape) == 2 and name.endswith("dw_kernel"):
            bound = 1.0 / np.sqrt(shape[0])
            arr = rng.uniform(-bound, bound, size=shape)
        elif len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
        tensors[name] = arr.astype(DTYPE)
    return EncoderWeights(tensors)


def zero_weights(config: ConformerConfig) -> EncoderWeights:
    """All matrices and biases zero, normalizations at identity."""
    tensors = {}
    for name, shape in expected_shapes(config).items():
        tensors[name] = (np.ones(shape) if _is_gain(name) else np.zeros(shape)).astype(DTYPE)
    return EncoderWeights(tensors)


# ---------------------------------------------------------------------------
# primitives

def sinusoidal_encoding(positions, dim: int) -> np.ndarray:
    """Absolute positional encoding: sine on even dims, cosine on odd dims."""
    positions = np.asarray(positions, dtype=np.float64)[:, None]
    pair = np.arange(dim) // 2
    inv_freq = np.power(10000.0, -2.0 * pair / dim)
    angles = positions * inv_freq[None, :]
    pe = np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))
    return pe.astype(DTYPE)


def add_positional_encoding(projected: np.ndarray, start: int = 0) -> np.ndarray:
    """Add encodings for positions ``start, start + 1, ...`` to projected input rows."""
    projected = np.asarray(projected, dtype=DTYPE)
    pos = np.arange(start, start + len(projected))
    return projected + sinusoidal_encoding(pos, projected.shape[1])


def layer_norm(x, gain, bias):
    mean = x.mean(axis=-1, keepdims=True)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    return centered / np.sqrt(var + DTYPE(LN_EPS)) * gain + bias


def sigmoid(x):
    return DTYPE(1) / (DTYPE(1) + np.exp(-x))


def swish(x):
    return x * sigmoid(x)


def _feed_forward(x, p, ffn):
    h = layer_norm(x, p[f"{ffn}/ln_gain"], p[f"{ffn}/ln_bias"])
    h = swish(h @ p[f"{ffn}/w1"] + p[f"{ffn}/b1"])
    return h @ p[f"{ffn}/w2"] + p[f"{ffn}/b2"]


def _split_heads(x, heads):
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _self_attention(x, p, cache, positions, cfg):
    """Multi-head attention of the new rows over cached + new keys."""
    h = layer_norm(x, p["mhsa/ln_gain"], p["mhsa/ln_bias"])
    q = h @ p["mhsa/wq"] + p["mhsa/bq"]
    k = h @ p["mhsa/wk"] + p["mhsa/bk"]
    v = h @ p["mhsa/wv"] + p["mhsa/bv"]
    n_past = len(cache.keys)
    if n_past:
        k = np.concatenate([cache.keys, k], axis=0)
        v = np.concatenate([cache.values, v], axis=0)
    key_pos = np.arange(positions[0] - n_past, positions[-1] + 1)
    cache.keys = k[-cfg.attention_left_context:]
    cache.values = v[-cfg.attention_left_context:]

    heads = cfg.num_heads
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scale = DTYPE(1.0 / np.sqrt(q.shape[1] // heads))
    scores = np.matmul(qh, kh.transpose(0, 2, 1)) * scale
    rel = positions[:, None] - key_pos[None, :]
    allowed = (rel >= 0) & (rel <= cfg.attention_left_context)
    scores = np.where(allowed[None], scores, DTYPE(-np.inf))
    scores = scores - scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs = probs / probs.sum(axis=-1, keepdims=True)
    ctx = np.matmul(probs, vh).transpose(1, 0, 2).reshape(len(x), -1)
    return ctx @ p["mhsa/wo"] + p["mhsa/bo"]


def _conv_module(x, p, cache, cfg):
    h = layer_norm(x, p["conv/ln_gain"], p["conv/ln_bias"])
    h = h @ p["conv/pw1_weight"] + p["conv/pw1_bias"]
    d = x.shape[1]
    h = h[:, :d] * sigmoid(h[:, d:])
    h = np.ascontiguousarray(h, dtype=DTYPE)
    history = cache.conv_history
    y = kernels.causal_depthwise_conv(h, p["conv/dw_kernel"], p["conv/dw_bias"], history)
    keep = cfg.conv_span - 1
    if keep:
        cache.conv_history = np.ascontiguousarray(np.concatenate([history, h], axis=0)[-keep:])
    # batch norm in inference form: per-channel affine from running statistics
    y = (y - p["conv/bn_mean"]) / np.sqrt(p["conv/bn_var"] + DTYPE(BN_EPS)) * p["conv/bn_gain"] + p["conv/bn_bias"]
    y = swish(y)
    return y @ p["conv/pw2_weight"] + p["conv/pw2_bias"]


def conformer_block(x, p, cache, positions, cfg):
    """One conformer block over new rows ``x``; updates ``cache`` in place."""
    half = DTYPE(0.5)
    x = x + half * _feed_forward(x, p, "ffn1")
    x = x + _self_attention(x, p, cache, positions, cfg)
    x = x + _conv_module(x, p, cache, cfg)
    x = x + half * _feed_forward(x, p, "ffn2")
    return layer_norm(x, p["final_ln_gain"], p["final_ln_bias"])


# ---------------------------------------------------------------------------
# state and drivers

@dataclass
class LayerCache:
    keys: np.ndarray
    values: np.ndarray
    conv_history: np.ndarray


@dataclass
class EncoderState:
    """Streaming state for one audio stream.

    Holds, per layer, up to ``attention_left_context`` past keys/values and
    the last ``conv_span - 1`` depthwise-conv inputs, plus the step index.
    """
    config: ConformerConfig | None = None
    layers: list = field(default_factory=list)
    step: int = 0

    @classmethod
    def initial(cls, config: ConformerConfig) -> "EncoderState":
        if config.num_layers == 0:
            raise ConfigurationError("cannot stream an encoder with zero layers")
        layers = []
        for layer in range(1, config.num_layers + 1):
            d = config.layer_dim(layer)
            layers.append(LayerCache(
                keys=np.zeros((0, d), DTYPE),
                values=np.zeros((0, d), DTYPE),
                conv_history=np.zeros((config.conv_span - 1, d), DTYPE),
            ))
        return cls(config=config, layers=layers, step=0)


def _check_features(features, config):
    features = np.asarray(features, dtype=DTYPE)
    if features.ndim != 2 or features.shape[1] != config.input_dim:
        raise InvalidInputError(
            f"expected features of shape (n, {config.input_dim}), got {features.shape}")
    return np.ascontiguousarray(features)


def _run(features, weights, config, state):
    """Push ``features`` (even count) through every layer, starting at ``state``."""
    n = len(features)
    base = 2 * state.step
    x = features @ weights["encoder/input/weight"] + weights["encoder/input/bias"]
    x = add_positional_encoding(x, start=base)
    positions = np.arange(base, base + n)
    for layer in range(1, config.num_layers + 1):
        x = conformer_block(x, weights.layer(layer), state.layers[layer - 1], positions, config)
        if layer == config.subsample_after_layer:
            x = x.reshape(n // 2, 2 * x.shape[1])
            positions = np.arange(state.step, state.step + n // 2)
        if layer == config.projection_after_layer:
            x = np.maximum(x @ weights["encoder/projection/weight"] + weights["encoder/projection/bias"], DTYPE(0))
    state.step += n // 2
    return x


def encode_sequence(features, weights: EncoderWeights, config: ConformerConfig) -> np.ndarray:
    """Encode a whole utterance. Returns ``(floor(n / 2), model_dim)`` embeddings."""
    weights.validate(config)
    features = _check_features(features, config)
    n = (len(features) // 2) * 2
    if n == 0:
        return np.zeros((0, config.model_dim), DTYPE)
    return _run(features[:n], weights, config, EncoderState.initial(config))


def encode_step(state: EncoderState, new_frames, weights: EncoderWeights,
                config: ConformerConfig):
    """Consume exactly 2 feature frames; return ``(embedding, state)``.

    ``state`` is updated in place and also returned.
    """
    if state is None or state.config is None or not state.layers:
        raise UsageError("encoder state is not initialized; use EncoderState.initial(config)")
    if state.config != config:
        raise UsageError("encoder state was initialized for a different config")
    frames = _check_features(new_frames, config)
    if len(frames) != 2:
        raise InvalidInputError(f"encode_step takes exactly 2 frames, got {len(frames)}")
    out = _run(frames, weights, config, state)
    return out[0], state


class StreamingEncoder:
    """Buffers arbitrary-size feature chunks and emits one embedding per 2 frames."""

    def __init__(self, weights: EncoderWeights, config: ConformerConfig):
        weights.validate(config)
        self.weights = weights
        self.config = config
        self.state = EncoderState.initial(config)
        self._pending = np.zeros((0, config.input_dim), DTYPE)

    def push(self, features) -> np.ndarray:
        features = _check_features(features, self.config)
        buf = np.concatenate([self._pending, features], axis=0)
        out = []
        i = 0
        while i + 2 <= len(buf):
            emb, _ = encode_step(self.state, buf[i:i + 2], self.weights, self.config)
            out.append(emb)
            i += 2
        self._pending = buf[i:]
        if not out:
            return np.zeros((0, self.config.model_dim), DTYPE)
        return np.stack(out)
