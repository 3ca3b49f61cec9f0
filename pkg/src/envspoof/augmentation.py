"""Copy-synthesis augmentation: analyse bona fide audio to mel, resynthesize a spoof."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import numpy as np

from .frontend import (
    MelConfig,
    MelSpec,
    Waveform,
    fix_duration,
    istft,
    load_waveform,
    mel_filterbank,
    mel_spectrogram,
    save_waveform,
    stft,
)
from .manifest import ManifestRow, check_unique, resolve_audio

log = logging.getLogger(__name__)


class ResynthesisError(RuntimeError):
    pass


class Resynthesizer(Protocol):
    name: str

    def __call__(self, mel: MelSpec) -> Waveform: ...


@dataclass
class GriffinLimConfig:
    iterations: int = 32
    init_phase: str = "random"  # or "zero"
    seed: int = 0


def mel_to_magnitude(m: MelSpec) -> np.ndarray:
    """Linear STFT magnitude estimate via the filterbank pseudo-inverse, (frames, n_fft//2+1)."""
    cfg = m.config
    power = np.exp(m.values)
    # floor cells carry no energy
    power[m.values <= np.log(cfg.log_floor)] = 0.0
    linear = np.maximum(power @ np.linalg.pinv(mel_filterbank(cfg)).T, 0.0)
    return np.sqrt(linear)


def spectral_distance(x: np.ndarray, magnitude: np.ndarray, cfg: MelConfig) -> float:
    """Frobenius distance between |STFT(x)| and a target magnitude.

    Measured over the full two-sided spectrum, i.e. interior one-sided bins
    count twice; this is the norm in which Griffin-Lim is non-increasing.
    """
    diff = (np.abs(stft(x, cfg)) - magnitude) ** 2
    weights = np.full(diff.shape[1], 2.0)
    weights[0] = 1.0
    if cfg.n_fft % 2 == 0:
        weights[-1] = 1.0
    return float(np.sqrt((diff * weights).sum()))


def griffin_lim(m: MelSpec, cfg: GriffinLimConfig, history: list | None = None) -> Waveform:
    """Classic Griffin-Lim phase recovery from a log-mel spectrogram.

    If ``history`` is given, the spectral distance of each iterate is appended.
    """
    if cfg.iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {cfg.iterations}")
    mcfg = m.config
    magnitude = mel_to_magnitude(m)
    if cfg.init_phase == "zero":
        phase = np.ones_like(magnitude, dtype=np.complex128)
    elif cfg.init_phase == "random":
        rng = np.random.default_rng(cfg.seed)
        phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    else:
        raise ValueError(f"unknown init_phase {cfg.init_phase!r}")

    x = istft(magnitude * phase, mcfg)
    for _ in range(cfg.iterations):
        spec = stft(x, mcfg)
        mag = np.abs(spec)
        phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1.0), 1.0)
        x = istft(magnitude * phase, mcfg)
        if history is not None:
            history.append(spectral_distance(x, magnitude, mcfg))
    return Waveform(x, mcfg.sample_rate)


class GriffinLimResynthesizer:
    def __init__(self, config: GriffinLimConfig | None = None, name="gl"):
        self.config = config or GriffinLimConfig()
        self.name = name

    def __call__(self, mel: MelSpec) -> Waveform:
        return griffin_lim(mel, self.config)

    def with_seed(self, seed: int) -> "GriffinLimResynthesizer":
        cfg = GriffinLimConfig(self.config.iterations, self.config.init_phase, seed)
        return GriffinLimResynthesizer(cfg, self.name)


def copy_synthesis(w: Waveform, r: Resynthesizer, cfg: MelConfig, utt_id: str = "?") -> Waveform:
    """Resynthesize ``w`` from its own mel-spectrogram; callers label the result spoof."""
    mel = mel_spectrogram(w, cfg)
    try:
        return r(mel)
    except Exception as exc:
        raise ResynthesisError(f"{utt_id}: resynthesizer {r.name!r} failed: {exc}") from exc


def utterance_seed(seed: int, utt_id: str) -> int:
    return int(np.random.SeedSequence([seed, zlib.crc32(utt_id.encode())]).generate_state(1)[0])


def augment_manifest(
    rows: list[ManifestRow],
    resynthesizers: list,
    ratio: float,
    seed: int,
    out_dir,
    mel_config: MelConfig,
    duration: float | None = None,
    base_dir=None,
) -> list[ManifestRow]:
    """Append copy-synthesized spoofs for a seeded ``ratio`` fraction of bona fide rows.

    Resynthesizers are assigned round-robin over the selected rows. New files
    go to ``out_dir`` and new rows reference them relative to ``base_dir``
    when possible. Existing rows are returned untouched.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"ratio must lie in [0, 1], got {ratio}")
    bona = [r for r in rows if r.label == "bonafide"]
    n_pick = int(round(ratio * len(bona)))
    if n_pick == 0:
        return list(rows)
    if not resynthesizers:
        raise ValueError("no resynthesizers given")

    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    rng = np.random.default_rng(seed)
    picked = np.sort(rng.choice(len(bona), size=n_pick, replace=False))
    new_rows = []
    for n, idx in enumerate(picked):
        src = bona[idx]
        r = resynthesizers[n % len(resynthesizers)]
        if hasattr(r, "with_seed"):
            r = r.with_seed(utterance_seed(seed, src.utt_id))
        w = load_waveform(resolve_audio(src, base_dir))
        target = duration if duration is not None else w.duration
        fake = fix_duration(copy_synthesis(w, r, mel_config, src.utt_id), target)
        utt_id = f"{src.utt_id}-{r.name}"
        path = out_dir / f"{utt_id}.wav"
        save_waveform(path, fake)
        if base_dir is not None:
            try:
                path = path.resolve().relative_to(Path(base_dir).resolve())
            except ValueError:
                pass
        new_rows.append(ManifestRow(utt_id, str(path), "spoof", r.name))
        log.debug("copy-synthesized %s with %s", src.utt_id, r.name)

    out = list(rows) + new_rows
    check_unique(out)
    return out
