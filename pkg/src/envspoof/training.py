"""Class-weighted cross-entropy training over a manifest."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .augmentation import GriffinLimConfig, GriffinLimResynthesizer, augment_manifest
from .branches import FAKE, REAL
from .checkpoint import save_checkpoint
from .config import ExperimentConfig
from .evaluation import TrialScore, compute_eer
from .frontend import MelSpec, fix_duration, load_waveform, mel_spectrogram, spec_augment
from .manifest import ManifestRow, resolve_audio
from .model import Detector

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class ClassWeights:
    fake: float = 0.1
    real: float = 0.9

    def __post_init__(self):
        if self.fake <= 0 or self.real <= 0:
            raise ValueError("class weights must be positive")

    def as_tensor(self, dtype=torch.float32):
        w = torch.empty(2, dtype=dtype)
        w[FAKE], w[REAL] = self.fake, self.real
        return w


def label_index(label: str) -> int:
    return REAL if label == "bonafide" else FAKE


def weighted_cross_entropy(logits: torch.Tensor, labels: torch.Tensor, cw: ClassWeights) -> torch.Tensor:
    """Mean over the batch of ``-w[label] * log_softmax(logits)[label]``.

    The mean is a plain average, not normalized by the summed weights.
    """
    if logits.dim() == 1:
        logits, labels = logits.unsqueeze(0), labels.reshape(1)
    logp = F.log_softmax(logits, dim=-1).gather(1, labels.long().unsqueeze(1)).squeeze(1)
    w = cw.as_tensor(logits.dtype)[labels.long()]
    return (-w * logp).mean()


def prepare_features(rows, config: ExperimentConfig, base_dir=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Load, fix duration and mel-transform every row: (N, frames, n_mels), (N,)."""
    mel_cfg = config.mel_config()
    mels, labels = [], []
    for row in rows:
        w = fix_duration(load_waveform(resolve_audio(row, base_dir)), config.frontend.duration)
        mels.append(mel_spectrogram(w, mel_cfg).values)
        labels.append(label_index(row.label))
    feats = torch.tensor(np.stack(mels), dtype=torch.float32) if mels else torch.empty(0)
    return feats, torch.tensor(labels, dtype=torch.long)


def build_model(config: ExperimentConfig) -> Detector:
    torch.manual_seed(config.seed)
    return Detector(**config.model_kwargs())


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    wallclock: float
    dev_loss: float | None = None
    dev_accuracy: float | None = None
    dev_eer: float | None = None


@dataclass
class TrainResult:
    model: Detector
    history: list[EpochStats] = field(default_factory=list)
    steps: int = 0
    checkpoints: list[Path] = field(default_factory=list)


def _augment_batch(mels: torch.Tensor, config: ExperimentConfig, rng: np.random.Generator):
    spec_cfg, mel_cfg = config.specaug_config(), config.mel_config()
    out = [
        torch.from_numpy(spec_augment(MelSpec(m.numpy().astype(np.float64), mel_cfg), spec_cfg, rng).values)
        for m in mels
    ]
    return torch.stack(out).to(mels.dtype)


def train(
    config: ExperimentConfig,
    rows: list[ManifestRow],
    out_dir=None,
    base_dir=None,
    model: Detector | None = None,
    dev_rows: list[ManifestRow] | None = None,
    dev_base_dir=None,
) -> TrainResult:
    """Train a detector; writes ``metrics.tsv`` and checkpoints when ``out_dir`` is set.

    With ``dev_rows``, the dev set is scored after every epoch (loss, accuracy
    and EER go to ``EpochStats`` and ``dev_metrics.tsv``). It is monitored
    only; no model selection or early stopping happens.
    """
    config.validate()
    tcfg = config.training
    labels = {r.label for r in rows}
    if labels != {"bonafide", "spoof"}:
        raise TrainingError(f"training manifest needs both classes, found {sorted(labels) or 'none'}")

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    if config.augmentation.enabled:
        if out_dir is None:
            raise TrainingError("augmentation writes audio and needs an output directory")
        gl = GriffinLimResynthesizer(GriffinLimConfig(config.augmentation.gl_iterations))
        rows = augment_manifest(
            rows, [gl], config.augmentation.ratio, config.seed, out_dir / "augmented",
            config.mel_config(), config.frontend.duration, base_dir,
        )

    feats, targets = prepare_features(rows, config, base_dir)
    dev = prepare_features(dev_rows, config, dev_base_dir) if dev_rows else None
    if model is None:
        model = build_model(config)
    cw = ClassWeights(tcfg.w_fake, tcfg.w_real)
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.lr)
    gen = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)

    result = TrainResult(model)
    metrics = dev_metrics = None
    if out_dir is not None:
        metrics = open(out_dir / "metrics.tsv", "w", encoding="utf-8", newline="\n")
        if dev is not None:
            dev_metrics = open(out_dir / "dev_metrics.tsv", "w", encoding="utf-8", newline="\n")
    start = time.perf_counter()
    try:
        for epoch in range(1, tcfg.epochs + 1):
            model.train()
            order = torch.randperm(len(targets), generator=gen)
            loss_sum, correct, seen = 0.0, 0, 0
            for i in range(0, len(order), tcfg.batch_size):
                if tcfg.max_steps and result.steps >= tcfg.max_steps:
                    break
                idx = order[i : i + tcfg.batch_size]
                x, y = feats[idx], targets[idx]
                if config.specaug.enabled:
                    x = _augment_batch(x, config, rng)
                logits = model(x)
                loss = weighted_cross_entropy(logits, y, cw)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"non-finite loss {loss.item()} at epoch {epoch}, step {result.steps + 1}"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                result.steps += 1
                loss_sum += loss.item() * len(y)
                correct += int((logits.argmax(dim=-1) == y).sum())
                seen += len(y)
            if seen == 0:
                break
            stats = EpochStats(epoch, loss_sum / seen, correct / seen, time.perf_counter() - start)
            if dev is not None:
                stats.dev_loss, stats.dev_accuracy, stats.dev_eer = _dev_metrics(model, dev, dev_rows, cw)
                log.info("epoch %d dev loss %.5f acc %.4f eer %.4f",
                         epoch, stats.dev_loss, stats.dev_accuracy, stats.dev_eer)
                if dev_metrics is not None:
                    dev_metrics.write(
                        f"{epoch}\t{stats.dev_loss:.6f}\t{stats.dev_accuracy:.4f}\t{stats.dev_eer:.6f}\n"
                    )
                    dev_metrics.flush()
            result.history.append(stats)
            log.info("epoch %d loss %.5f acc %.4f", epoch, stats.loss, stats.accuracy)
            if metrics is not None:
                metrics.write(f"{epoch}\t{stats.loss:.6f}\t{stats.accuracy:.4f}\t{stats.wallclock:.2f}\n")
                metrics.flush()
                if tcfg.checkpoint_every and epoch % tcfg.checkpoint_every == 0:
                    path = out_dir / f"checkpoint_epoch{epoch:03d}.bin"
                    save_checkpoint(path, model, config, {"epoch": epoch, "steps": result.steps})
                    result.checkpoints.append(path)
    finally:
        for f in (metrics, dev_metrics):
            if f is not None:
                f.close()

    model.eval()
    if out_dir is not None:
        final = out_dir / "checkpoint_final.bin"
        save_checkpoint(final, model, config, {"epoch": len(result.history), "steps": result.steps})
        result.checkpoints.append(final)
    return result


def _dev_metrics(model, dev, dev_rows, cw):
    feats, targets = dev
    model.eval()
    with torch.no_grad():
        logits = model(feats)
    loss = weighted_cross_entropy(logits, targets, cw).item()
    acc = float((logits.argmax(dim=-1) == targets).float().mean())
    scores = (logits[:, REAL] - logits[:, FAKE]).tolist()
    trials = [TrialScore(r.utt_id, s, r.label) for r, s in zip(dev_rows, scores)]
    eer = compute_eer(trials)[0] if {r.label for r in dev_rows} == {"bonafide", "spoof"} else float("nan")
    return loss, acc, eer


@torch.no_grad()
def evaluate_batch(model, feats: torch.Tensor, targets: torch.Tensor, cw: ClassWeights):
    """(loss, accuracy) in inference mode with no augmentation."""
    model.eval()
    logits = model(feats)
    loss = weighted_cross_entropy(logits, targets, cw).item()
    return loss, float((logits.argmax(dim=-1) == targets).float().mean())
