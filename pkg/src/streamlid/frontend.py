"""Audio frontend: gain control, log-mel filterbank energies, frame stacking.

Output features are 512-dim stacked LFBE vectors at a 30 ms frame rate:
128 mel bins per 10 ms frame, stacked over 4 frames, keeping every 3rd stack.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidInputError

SILENCE_RMS_FLOOR = 1e-5


@dataclass(frozen=True)
class AudioSegment:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidInputError("audio must be mono (1-D samples)")
        if self.sample_rate_hz <= 0:
            raise InvalidInputError("sample rate must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate_hz


@dataclass(frozen=True)
class FrontendConfig:
    sample_rate_hz: int = 16000
    frame_length_ms: int = 32
    frame_step_ms: int = 10
    num_mel_bins: int = 128
    mel_low_hz: float = 125.0
    mel_high_hz: float = 7500.0
    stack_factor: int = 4
    subsample_factor: int = 3
    log_floor: float = 1e-12
    agc_target_rms: float = 0.1
    agc_window_ms: int = 500

    def __post_init__(self):
        if self.sample_rate_hz < 2 * self.mel_high_hz:
            raise ConfigurationError(
                f"sample rate {self.sample_rate_hz} Hz cannot represent mel_high_hz={self.mel_high_hz}")
        if not 0 <= self.mel_low_hz < self.mel_high_hz:
            raise ConfigurationError("need 0 <= mel_low_hz < mel_high_hz")
        if self.log_floor <= 0:
            raise ConfigurationError("log_floor must be positive")
        if min(self.stack_factor, self.subsample_factor, self.num_mel_bins) < 1:
            raise ConfigurationError("stack/subsample factors and mel bins must be >= 1")

    @property
    def frame_samples(self) -> int:
        return self.sample_rate_hz * self.frame_length_ms // 1000

    @property
    def step_samples(self) -> int:
        return self.sample_rate_hz * self.frame_step_ms // 1000

    @property
    def fft_size(self) -> int:
        # smallest power of two covering one frame
        return 1 << (self.frame_samples - 1).bit_length()

    @property
    def feature_dim(self) -> int:
        return self.stack_factor * self.num_mel_bins

    @property
    def output_step_ms(self) -> int:
        return self.frame_step_ms * self.subsample_factor


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(config: FrontendConfig) -> np.ndarray:
    """``num_mel_bins + 2`` edge frequencies in Hz, equally spaced on the mel scale."""
    mels = np.linspace(hz_to_mel(config.mel_low_hz), hz_to_mel(config.mel_high_hz),
                       config.num_mel_bins + 2)
    return mel_to_hz(mels)


def mel_filterbank(config: FrontendConfig) -> np.ndarray:
    """Triangular filters evaluated at the rfft bin frequencies.

    Returns an array of shape ``(fft_size // 2 + 1, num_mel_bins)``.
    """
    n_fft = config.fft_size
    freqs = np.arange(n_fft // 2 + 1) * config.sample_rate_hz / n_fft
    edges = mel_band_edges(config)
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (center - lo)
    falling = (hi - freqs[None, :]) / (hi - center)
    return np.maximum(0.0, np.minimum(rising, falling)).T


def hann_window(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def apply_gain_control(audio: AudioSegment, target_rms: float = 0.1, window_ms: int = 500,
                       silence_floor: float = SILENCE_RMS_FLOOR) -> AudioSegment:
    """Normalize the RMS of consecutive windows to ``target_rms``.

    Windows whose RMS is below ``silence_floor`` pass through unscaled so that
    silence is never amplified into noise.
    """
    if len(audio) == 0:
        raise InvalidInputError("cannot gain-control empty audio")
    if target_rms <= 0:
        raise InvalidInputError("target_rms must be positive")
    if window_ms <= 0:
        raise InvalidInputError("window_ms must be positive")
    win = max(1, audio.sample_rate_hz * window_ms // 1000)
    x = audio.samples
    out = x.copy()
    for start in range(0, len(x), win):
        seg = x[start:start + win]
        rms = np.sqrt(np.mean(seg * seg))
        if rms >= silence_floor:
            out[start:start + win] = seg * (target_rms / rms)
    return AudioSegment(out, audio.sample_rate_hz)


def frame_signal(samples: np.ndarray, frame_samples: int, step_samples: int) -> np.ndarray:
    n = len(samples)
    if n < frame_samples:
        return np.zeros((0, frame_samples), dtype=np.float64)
    count = (n - frame_samples) // step_samples + 1
    idx = np.arange(frame_samples)[None, :] + step_samples * np.arange(count)[:, None]
    return samples[idx]


def compute_lfbe(audio: AudioSegment, config: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Log mel-filterbank energies at the 10 ms frame rate, shape ``(n_frames, num_mel_bins)``.

    Audio shorter than one frame yields zero frames.
    """
    if audio.sample_rate_hz != config.sample_rate_hz:
        raise InvalidInputError(
            f"audio is {audio.sample_rate_hz} Hz, frontend expects {config.sample_rate_hz} Hz")
    frames = frame_signal(audio.samples, config.frame_samples, config.step_samples)
    if len(frames) == 0:
        return np.zeros((0, config.num_mel_bins), dtype=np.float64)
    frames = frames * hann_window(config.frame_samples)
    spectrum = np.fft.rfft(frames, n=config.fft_size, axis=1)
    power = spectrum.real ** 2 + spectrum.imag ** 2
    energies = power @ mel_filterbank(config)
    return np.log(np.maximum(energies, config.log_floor))


def stack_and_subsample(frames: np.ndarray, config: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Concatenate ``stack_factor`` consecutive frames, starting every ``subsample_factor`` frames.

    Output row ``i`` is ``frames[s*i : s*i + k]`` flattened in temporal order
    (``s`` = subsample factor, ``k`` = stack factor).
    """
    frames = np.asarray(frames)
    k, s = config.stack_factor, config.subsample_factor
    dim = frames.shape[1] if frames.ndim == 2 else config.num_mel_bins
    n = len(frames)
    if n < k:
        return np.zeros((0, k * dim), dtype=np.float32)
    count = (n - k) // s + 1
    idx = s * np.arange(count)[:, None] + np.arange(k)[None, :]
    return frames[idx].reshape(count, k * dim).astype(np.float32)


def feature_timestamps_ms(num_frames: int, config: FrontendConfig = FrontendConfig()) -> np.ndarray:
    """Start time of the earliest raw frame contributing to each stacked frame."""
    return np.arange(num_frames, dtype=np.int64) * config.output_step_ms


def extract_features(audio: AudioSegment, config: FrontendConfig = FrontendConfig(),
                     agc: bool = True) -> np.ndarray:
    """Full frontend: optional AGC, LFBE, stacking. Returns float32 ``(n, feature_dim)``."""
    if agc:
        audio = apply_gain_control(audio, config.agc_target_rms, config.agc_window_ms)
    return stack_and_subsample(compute_lfbe(audio, config), config)


def read_wav(path) -> AudioSegment:
    """Read a mono 16-bit PCM RIFF file."""
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise InvalidInputError(f"{path}: expected mono audio, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise InvalidInputError(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioSegment(samples, rate)


def write_wav(path, audio: AudioSegment):
    pcm = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(audio.sample_rate_hz)
        fh.writeframes(pcm.tobytes())


def read_raw_f32(path, sample_rate_hz: int) -> AudioSegment:
    return AudioSegment(np.fromfile(str(path), dtype="<f4").astype(np.float64), sample_rate_hz)


def load_audio(path, raw_rate: int | None = None) -> AudioSegment:
    """Load a WAV file, or a raw little-endian float32 file when ``raw_rate`` is given."""
    if raw_rate is not None:
        return read_raw_f32(path, raw_rate)
    try:
        return read_wav(path)
    except (wave.Error, EOFError) as exc:
        raise InvalidInputError(f"{path}: not a readable PCM WAV file ({exc})") from exc
