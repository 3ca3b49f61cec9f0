"""Synthetic bona fide / copy-synthesis spoof dataset for tests and demos."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .augmentation import GriffinLimConfig, GriffinLimResynthesizer, copy_synthesis, utterance_seed
from .config import ExperimentConfig
from .frontend import Waveform, fix_duration, save_waveform
from .manifest import ManifestRow, write_manifest


def environmental_proxy(rng: np.random.Generator, n_samples: int, sample_rate: int) -> np.ndarray:
    """2-4 decaying/steady sinusoids plus a band of filtered noise."""
    t = np.arange(n_samples) / sample_rate
    x = np.zeros(n_samples)
    for _ in range(rng.integers(2, 5)):
        freq = rng.uniform(100.0, 0.4 * sample_rate)
        amp = rng.uniform(0.05, 0.25)
        decay = rng.uniform(0.0, 1.5)
        x += amp * np.exp(-decay * t) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))

    lo = rng.uniform(50.0, 0.3 * sample_rate)
    hi = min(lo + rng.uniform(200.0, 2000.0), 0.49 * sample_rate)
    spectrum = np.fft.rfft(rng.standard_normal(n_samples))
    freqs = np.fft.rfftfreq(n_samples, 1.0 / sample_rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    noise = np.fft.irfft(spectrum, n=n_samples)
    noise *= rng.uniform(0.01, 0.08) / max(np.std(noise), 1e-12)
    x += noise

    peak = np.max(np.abs(x))
    return x * (0.9 / peak) if peak > 0.9 else x


def generate_synthetic_dataset(n_bonafide: int, config: ExperimentConfig, seed: int, out_dir) -> list[ManifestRow]:
    """Write ``n_bonafide`` proxies and one Griffin-Lim copy each, plus ``manifest.tsv``.

    Rows reference audio relative to ``out_dir``.
    """
    if n_bonafide < 2:
        raise ValueError("need at least 2 bona fide utterances")
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    fr = config.frontend
    n_samples = int(round(fr.duration * fr.sample_rate))
    mel_cfg = config.mel_config()
    gl = GriffinLimResynthesizer(GriffinLimConfig(config.augmentation.gl_iterations), name="gl")
    rng = np.random.default_rng(seed)

    bona, spoof = [], []
    for i in range(n_bonafide):
        utt = f"bf{i:04d}"
        w = Waveform(environmental_proxy(rng, n_samples, fr.sample_rate), fr.sample_rate)
        save_waveform(audio_dir / f"{utt}.wav", w)
        bona.append(ManifestRow(utt, f"audio/{utt}.wav", "bonafide", "-"))

        fake_id = f"gl{i:04d}"
        fake = copy_synthesis(w, gl.with_seed(utterance_seed(seed, utt)), mel_cfg, utt)
        save_waveform(audio_dir / f"{fake_id}.wav", fix_duration(fake, fr.duration))
        spoof.append(ManifestRow(fake_id, f"audio/{fake_id}.wav", "spoof", "gl"))

    rows = bona + spoof
    write_manifest(out_dir / "manifest.tsv", rows)
    return rows
