"""Waveform loading, duration fixing, log-mel features and SpecAug masking."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile


class AudioError(ValueError):
    """Raised for unreadable, empty or otherwise unusable audio."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("waveform must be a non-empty 1-D sample sequence")
        if not np.all(np.isfinite(self.samples)):
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError(f"sample rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class MelConfig:
    sample_rate: int = 16000
    frame_length: float = 0.025
    frame_shift: float = 0.010
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float | None = None
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.fmax is None:
            self.fmax = self.sample_rate / 2
        if not self.frame_length >= self.frame_shift > 0:
            raise ValueError("need frame_length >= frame_shift > 0")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise ValueError("need 0 <= fmin < fmax <= sample_rate / 2")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def win_length(self) -> int:
        return int(round(self.frame_length * self.sample_rate))

    @property
    def hop_length(self) -> int:
        return int(round(self.frame_shift * self.sample_rate))

    @property
    def n_fft(self) -> int:
        # next power of two at or above the window
        return 1 << (self.win_length - 1).bit_length()

    def num_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.win_length) // self.hop_length


@dataclass
class MelSpec:
    values: np.ndarray  # (frames, n_mels)
    config: MelConfig = field(default_factory=MelConfig)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]


@dataclass
class SpecAugConfig:
    n_freq_masks: int = 2
    max_freq_width: int = 16
    n_time_masks: int = 2
    max_time_width: int = 40
    fill_value: float = math.log(1e-10)


def load_waveform(path) -> Waveform:
    """Read a 16-bit PCM or float WAV file into a mono waveform in [-1, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"audio file not found: {path}")
    try:
        sr, data = wavfile.read(path)
    except ValueError as exc:
        raise AudioError(f"{path}: unsupported WAV encoding ({exc})") from exc

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioError(f"{path}: zero-length audio")
    return Waveform(samples, int(sr))


def save_waveform(path, w: Waveform, pcm16: bool = False):
    """Write a mono WAV; float32 by default, clipped 16-bit PCM on request."""
    samples = np.clip(w.samples, -1.0, 1.0)
    if pcm16:
        data = np.round(samples * 32767.0).astype(np.int16)
    else:
        data = samples.astype(np.float32)
    wavfile.write(Path(path), w.sample_rate, data)


def fix_duration(w: Waveform, target_seconds: float) -> Waveform:
    """Trim to, or cyclically repeat up to, exactly ``target_seconds``."""
    if target_seconds <= 0:
        raise ValueError("target_seconds must be positive")
    n = int(round(target_seconds * w.sample_rate))
    if len(w) >= n:
        return Waveform(w.samples[:n].copy(), w.sample_rate)
    return Waveform(np.resize(w.samples, n), w.sample_rate)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: MelConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    edges = np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """HTK-scale triangular filters, shape (n_mels, n_fft // 2 + 1), unnormalized."""
    edges_hz = mel_to_hz(
        np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2)
    )
    bin_hz = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate / cfg.n_fft
    lower, center, upper = edges_hz[:-2, None], edges_hz[1:-1, None], edges_hz[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def hann_window(n: int) -> np.ndarray:
    # periodic Hann, as used for STFT analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    n_frames = 1 + (samples.size - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def stft(samples: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Uncentered Hann STFT, shape (frames, n_fft // 2 + 1)."""
    frames = frame_signal(samples, cfg.win_length, cfg.hop_length)
    return np.fft.rfft(frames * hann_window(cfg.win_length), n=cfg.n_fft, axis=1)


def istft(spec: np.ndarray, cfg: MelConfig) -> np.ndarray:
    """Least-squares inverse of :func:`stft` (Griffin-Lim's signal estimate).

    Samples where every overlapping window is zero carry no information
    and are returned as zero.
    """
    win, hop = cfg.win_length, cfg.hop_length
    n_frames = spec.shape[0]
    window = hann_window(win)
    frames = np.fft.irfft(spec, n=cfg.n_fft, axis=1)[:, :win] * window
    length = win + (n_frames - 1) * hop
    out = np.zeros(length)
    norm = np.zeros(length)
    for t in range(n_frames):
        out[t * hop : t * hop + win] += frames[t]
        norm[t * hop : t * hop + win] += window**2
    nonzero = norm > 1e-12
    out[nonzero] /= norm[nonzero]
    out[~nonzero] = 0.0
    return out


def mel_spectrogram(w: Waveform, cfg: MelConfig) -> MelSpec:
    if w.sample_rate != cfg.sample_rate:
        raise AudioError(
            f"sample rate {w.sample_rate} does not match configured {cfg.sample_rate}"
        )
    if len(w) < cfg.win_length:
        raise AudioError(
            f"audio of {len(w)} samples is shorter than one {cfg.win_length}-sample frame"
        )
    power = np.abs(stft(w.samples, cfg)) ** 2
    mel_power = power @ mel_filterbank(cfg).T
    return MelSpec(np.log(np.maximum(mel_power, cfg.log_floor)), cfg)


def spec_augment(m: MelSpec, cfg: SpecAugConfig, rng: np.random.Generator) -> MelSpec:
    """Overwrite random frequency and time bands with ``cfg.fill_value``."""
    values = m.values.copy()
    frames, n_mels = values.shape
    for _ in range(cfg.n_freq_masks):
        width = int(rng.integers(0, min(cfg.max_freq_width, n_mels) + 1))
        start = int(rng.integers(0, n_mels - width + 1))
        values[:, start : start + width] = cfg.fill_value
    for _ in range(cfg.n_time_masks):
        width = int(rng.integers(0, min(cfg.max_time_width, frames) + 1))
        start = int(rng.integers(0, frames - width + 1))
        values[start : start + width, :] = cfg.fill_value
    return MelSpec(values, m.config)


MEL_MAGIC = b"MEL1"


def save_mel(path, m: MelSpec):
    """Cache layout: b"MEL1", frames u32, n_mels u32 (little-endian), float32 rows."""
    with open(path, "wb") as f:
        f.write(MEL_MAGIC + struct.pack("<II", m.frames, m.n_mels))
        f.write(m.values.astype("<f4").tobytes(order="C"))


def load_mel(path, config: MelConfig | None = None) -> MelSpec:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MEL_MAGIC:
        raise ValueError(f"{path}: not a MEL1 cache file")
    frames, n_mels = struct.unpack("<II", blob[4:12])
    values = np.frombuffer(blob[12:], dtype="<f4")
    if values.size != frames * n_mels:
        raise ValueError(f"{path}: truncated cache, expected {frames}x{n_mels} values")
    return MelSpec(values.reshape(frames, n_mels).astype(np.float64), config or MelConfig())
