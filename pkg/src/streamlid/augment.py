"""Training-time augmentation: noise mixing at a target SNR (MTR), reverberation
with user-supplied impulse responses, and SpecAugment-style masking.

Each utterance receives exactly one augmentation family; combining both
over-augments.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InvalidInputError
from .frontend import AudioSegment, load_audio


class Augmentation(enum.Enum):
    MTR = "mtr"
    SPEC_AUGMENT = "specaugment"


@dataclass
class MtrConfig:
    snr_db_min: float = 5.0
    snr_db_max: float = 25.0
    noise_sources: list = field(default_factory=list)
    rir_sources: list = field(default_factory=list)
    apply_probability: float = 0.5

    def __post_init__(self):
        if self.snr_db_min > self.snr_db_max:
            raise ConfigurationError("snr_db_min must not exceed snr_db_max")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise ConfigurationError("apply_probability must lie in [0, 1]")


@dataclass(frozen=True)
class SpecAugmentConfig:
    num_freq_masks: int = 2
    max_freq_mask_bins: int = 27
    num_time_masks: int = 2
    max_time_mask_frames: int = 40
    num_mel_bins: int = 128

    def __post_init__(self):
        if min(self.num_freq_masks, self.max_freq_mask_bins,
               self.num_time_masks, self.max_time_mask_frames) < 0:
            raise ConfigurationError("mask counts and sizes must be non-negative")
        if self.max_freq_mask_bins > self.num_mel_bins:
            raise ConfigurationError("frequency mask wider than the mel axis")


def signal_power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def fit_noise_length(noise: np.ndarray, length: int, rng: np.random.Generator) -> np.ndarray:
    """Loop ``noise`` from a random offset, or crop it, to exactly ``length`` samples."""
    start = int(rng.integers(len(noise)))
    reps = -(-(start + length) // len(noise))
    return np.tile(noise, reps)[start:start + length]


def mix_noise_at_snr(speech: AudioSegment, noise: AudioSegment, snr_db: float,
                     rng: np.random.Generator | None = None) -> AudioSegment:
    """Return ``speech + g * noise`` with ``g`` chosen to realize ``snr_db``.

    Powers are mean squared amplitude over the whole segment. Silent speech
    is returned unchanged with a warning.
    """
    if speech.sample_rate_hz != noise.sample_rate_hz:
        raise InvalidInputError("speech and noise sample rates differ")
    if len(noise) == 0:
        raise InvalidInputError("noise segment is empty")
    rng = np.random.default_rng(0) if rng is None else rng
    fitted = fit_noise_length(noise.samples, len(speech), rng)
    p_noise = signal_power(fitted)
    if p_noise == 0.0:
        raise InvalidInputError("noise has zero power")
    p_speech = signal_power(speech.samples)
    if p_speech == 0.0:
        warnings.warn("speech has zero power; returning it unmixed", RuntimeWarning, stacklevel=2)
        return AudioSegment(speech.samples.copy(), speech.sample_rate_hz)
    gain = noise_gain(p_speech, p_noise, snr_db)
    return AudioSegment(speech.samples + gain * fitted, speech.sample_rate_hz)


def noise_gain(p_speech: float, p_noise: float, snr_db: float) -> float:
    return float(np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0))))


def apply_reverb(audio: AudioSegment, impulse_response: AudioSegment) -> AudioSegment:
    """Convolve with an impulse response, truncated to the input length."""
    if impulse_response.sample_rate_hz != audio.sample_rate_hz:
        raise InvalidInputError("impulse response sample rate differs from audio")
    if len(impulse_response) == 0:
        raise InvalidInputError("impulse response is empty")
    wet = np.convolve(audio.samples, impulse_response.samples)[:len(audio)]
    return AudioSegment(wet, audio.sample_rate_hz)


def apply_mtr(speech: AudioSegment, mtr: MtrConfig, rng: np.random.Generator) -> AudioSegment:
    """Optional reverb from ``rir_sources`` then noise at an SNR drawn uniformly from the range."""
    out = speech
    if mtr.rir_sources:
        rir = mtr.rir_sources[int(rng.integers(len(mtr.rir_sources)))]
        out = apply_reverb(out, rir)
    if mtr.noise_sources:
        noise = mtr.noise_sources[int(rng.integers(len(mtr.noise_sources)))]
        snr = rng.uniform(mtr.snr_db_min, mtr.snr_db_max)
        out = mix_noise_at_snr(out, noise, snr, rng)
    return out


def _draw_mask(rng, max_width, axis_len):
    width = int(rng.integers(0, max_width + 1)) if max_width > 0 else 0
    width = min(width, axis_len)
    start = int(rng.integers(0, axis_len - width + 1))
    return start, width


def apply_specaugment(features: np.ndarray, config: SpecAugmentConfig = SpecAugmentConfig(),
                      seed: int = 0) -> np.ndarray:
    """Mask random mel-bin bands and time spans of stacked features.

    A frequency mask covers the same mel bins in every stacked sub-frame.
    Masked cells get the per-utterance mean of their feature dimension
    (computed before masking). Oversized masks are clamped.
    """
    features = np.asarray(features)
    if features.ndim != 2 or len(features) == 0:
        raise InvalidInputError("apply_specaugment needs a non-empty (frames, dim) array")
    n, dim = features.shape
    bins = config.num_mel_bins
    if dim % bins:
        raise InvalidInputError(f"feature dim {dim} is not a multiple of {bins} mel bins")
    rng = np.random.default_rng(seed)
    mask = np.zeros((n, dim), dtype=bool)
    by_bin = mask.reshape(n, dim // bins, bins)
    for _ in range(config.num_freq_masks):
        start, width = _draw_mask(rng, config.max_freq_mask_bins, bins)
        by_bin[:, :, start:start + width] = True
    for _ in range(config.num_time_masks):
        start, width = _draw_mask(rng, config.max_time_mask_frames, n)
        mask[start:start + width, :] = True
    out = features.copy()
    means = features.mean(axis=0, dtype=np.float64).astype(features.dtype)
    out[mask] = np.broadcast_to(means, (n, dim))[mask]
    return out


def choose_augmentation(utterance_id: int, mtr: MtrConfig, seed: int = 0) -> Augmentation:
    """Pick MTR with probability ``apply_probability``, SpecAugment otherwise.

    Deterministic in ``(seed, utterance_id)``.
    """
    u = np.random.default_rng([seed, utterance_id]).random()
    return Augmentation.MTR if u < mtr.apply_probability else Augmentation.SPEC_AUGMENT


def read_source_manifest(path) -> list[AudioSegment]:
    """Load every audio file listed in a one-path-per-line manifest.

    Relative paths resolve against the manifest's directory; blank lines and
    ``#`` comments are skipped.
    """
    base = Path(path).parent
    sources = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        p = Path(line)
        sources.append(load_audio(p if p.is_absolute() else base / p))
    return sources
