"""Time-frequency frontend: STFT analysis/synthesis, log-power-spectrum
features, ratio masks, and 16-bit PCM WAV I/O.

All functions are pure; waveforms and spectrogram containers are treated
as immutable once constructed.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

DEFAULT_SAMPLE_RATE = 16000
LPS_FLOOR = 1e-12


class TooShortError(ValueError):
    """Input waveform shorter than one analysis frame."""


@dataclass
class Waveform:
    """Mono time-domain signal with a nominal amplitude range of [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-d array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def rms(self) -> float:
        return float(np.sqrt(np.mean(self.samples**2)))


@dataclass(frozen=True)
class StftConfig:
    """Analysis parameters. Defaults give 257 one-sided bins at 16 kHz."""

    frame_len: int = 512
    hop: int = 256
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not (0 < self.hop <= self.frame_len <= self.fft_size):
            raise ValueError("require 0 < hop <= frame_len <= fft_size")
        if self.window != "hann":
            raise ValueError(f"unsupported window: {self.window!r}")

    @property
    def bins(self) -> int:
        return self.fft_size // 2 + 1

    def window_values(self) -> np.ndarray:
        # Periodic Hann; with 50% overlap the squared-window overlap-add
        # is a nonzero constant on interior samples, so synthesis below
        # reconstructs them exactly.
        n = np.arange(self.frame_len)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / self.frame_len)

    def num_frames(self, num_samples: int) -> int:
        if num_samples < self.frame_len:
            raise TooShortError(
                f"need at least {self.frame_len} samples, got {num_samples}"
            )
        return 1 + (num_samples - self.frame_len) // self.hop


@dataclass
class ComplexSpectrogram:
    """One-sided complex STFT, frames on axis 0 and bins on axis 1."""

    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[1] != self.config.bins:
            raise ValueError(
                f"expected shape (frames, {self.config.bins}), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrogram contains non-finite entries")

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def phase(self) -> np.ndarray:
        return np.angle(self.values)


@dataclass
class LpsFeatures:
    """Log-power spectrum: natural log of the floored squared magnitude."""

    values: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != self.config.bins:
            raise ValueError(
                f"expected shape (frames, {self.config.bins}), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("LPS features contain non-finite entries")


@dataclass
class Mask:
    """Real-valued time-frequency gain in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("mask must be 2-d")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValueError("mask values must lie in [0, 1]")


def stft(w: Waveform, cfg: StftConfig | None = None) -> ComplexSpectrogram:
    """Windowed one-sided STFT with no centre padding.

    Analysis starts at sample 0; a trailing partial frame is dropped.
    """
    cfg = cfg or StftConfig()
    n_frames = cfg.num_frames(len(w))
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, cfg.frame_len)
    frames = frames[:: cfg.hop][:n_frames]
    windowed = frames * cfg.window_values()
    values = np.fft.rfft(windowed, n=cfg.fft_size, axis=1)
    return ComplexSpectrogram(values, cfg)


def istft(s: ComplexSpectrogram) -> Waveform:
    """Overlap-add synthesis with window compensation.

    The analysis window already sits inside each frame, so frames are
    overlap-added as-is and divided by the summed window. Periodic Hann at
    50% overlap sums to exactly 1 away from the edges, making
    stft -> istft the identity on interior samples; partially covered edge
    samples are normalized only where the window sum is meaningful.
    """
    cfg = s.config
    win = cfg.window_values()
    n_frames = s.num_frames
    out_len = cfg.frame_len + (n_frames - 1) * cfg.hop
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    segs = np.fft.irfft(s.values, n=cfg.fft_size, axis=1)[:, : cfg.frame_len]
    for i in range(n_frames):
        start = i * cfg.hop
        out[start : start + cfg.frame_len] += segs[i]
        norm[start : start + cfg.frame_len] += win
    np.divide(out, norm, out=out, where=norm > 1e-2)
    return Waveform(out)


def lps(s: ComplexSpectrogram, floor_eps: float = LPS_FLOOR) -> LpsFeatures:
    """Natural-log power spectrum, floored at floor_eps to stay finite."""
    if floor_eps <= 0:
        raise ValueError("floor_eps must be positive")
    power = np.maximum(np.abs(s.values) ** 2, floor_eps)
    return LpsFeatures(np.log(power), s.config)


def reconstruct_from_lps(
    speech_lps: LpsFeatures, phase_source: ComplexSpectrogram
) -> Waveform:
    """Combine a log-power magnitude estimate with the phase of another
    spectrogram and resynthesize."""
    if speech_lps.values.shape != phase_source.values.shape:
        raise ValueError("LPS and phase source shapes differ")
    magnitude = np.exp(0.5 * speech_lps.values)
    values = magnitude * np.exp(1j * phase_source.phase())
    return istft(ComplexSpectrogram(values, phase_source.config))


def ideal_ratio_mask(
    speech_lps: LpsFeatures, noise_lps: LpsFeatures, exponent: float = 0.5
) -> Mask:
    """Ratio mask (Px / (Px + Pd)) ** exponent from log-power estimates."""
    if speech_lps.values.shape != noise_lps.values.shape:
        raise ValueError("speech and noise LPS shapes differ")
    if exponent <= 0:
        raise ValueError("exponent must be positive")
    p_speech = np.exp(speech_lps.values)
    p_noise = np.exp(noise_lps.values)
    m = (p_speech / (p_speech + p_noise)) ** exponent
    return Mask(np.clip(m, 0.0, 1.0))


def apply_mask(m: Mask, noisy: ComplexSpectrogram) -> ComplexSpectrogram:
    """Scale each time-frequency cell of the noisy spectrogram; the noisy
    phase is preserved. An all-ones mask is the exact identity."""
    if m.values.shape != noisy.values.shape:
        raise ValueError("mask and spectrogram shapes differ")
    return ComplexSpectrogram(noisy.values * m.values, noisy.config)


def read_wav(path, expect_rate: int | None = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM RIFF WAV file.

    Raises ValueError on stereo input or, when expect_rate is given, on a
    sample-rate mismatch.
    """
    with wave.open(str(path), "rb") as f:
        if f.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono, got {f.getnchannels()} channels")
        if f.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM")
        rate = f.getframerate()
        if expect_rate is not None and rate != expect_rate:
            raise ValueError(f"{path}: sample rate {rate} != expected {expect_rate}")
        raw = f.readframes(f.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write a mono 16-bit PCM RIFF WAV file (values clipped to range)."""
    scaled = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(w.sample_rate)
        f.writeframes(scaled.tobytes())


def resample(w: Waveform, target_rate: int) -> Waveform:
    """Polyphase windowed-sinc resampling."""
    if target_rate == w.sample_rate:
        return w
    g = np.gcd(int(w.sample_rate), int(target_rate))
    out = resample_poly(w.samples, target_rate // g, w.sample_rate // g)
    return Waveform(out, target_rate)
