"""Equal error rate, score/protocol files and weighted score-level ensembling.

EER convention
--------------
Operating points are the sorted unique scores plus +inf; a trial is accepted
iff ``score >= threshold``. FAR is the fraction of spoof trials accepted and
FRR the fraction of bona fide trials rejected, so FAR falls from 1 to 0 and
FRR rises from 0 to 1 along the sweep. The EER is the FAR/FRR value at the
first operating point where FRR >= FAR if the two are equal there; otherwise
both curves are linearly interpolated between that point and the previous
one and the EER is their common value at the crossing:

    a = (FAR[i-1] - FRR[i-1]) / ((FAR[i-1] - FRR[i-1]) - (FAR[i] - FRR[i]))
    EER = FAR[i-1] + a * (FAR[i] - FAR[i-1])

The returned threshold is the first operating point minimizing |FAR - FRR|.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class TrialScore:
    utt_id: str
    score: float
    label: str | None = None  # "bonafide" | "spoof"


def _split_labels(trials):
    bona, spoof = [], []
    for t in trials:
        if t.score != t.score or not math.isfinite(t.score):
            raise ScoreError(f"{t.utt_id}: non-finite score {t.score}")
        if t.label == "bonafide":
            bona.append(t.score)
        elif t.label == "spoof":
            spoof.append(t.score)
        else:
            raise ScoreError(f"{t.utt_id}: missing or unknown label {t.label!r}")
    if not bona or not spoof:
        raise ScoreError("EER needs at least one bonafide and one spoof trial")
    return np.asarray(bona, dtype=np.float64), np.asarray(spoof, dtype=np.float64)


def error_rates(bona: np.ndarray, spoof: np.ndarray):
    """(thresholds, FAR, FRR) at every unique score and at +inf."""
    thresholds = np.append(np.unique(np.concatenate([bona, spoof])), np.inf)
    bona_sorted, spoof_sorted = np.sort(bona), np.sort(spoof)
    # count of scores strictly below each threshold
    frr = np.searchsorted(bona_sorted, thresholds, side="left") / bona.size
    far = 1.0 - np.searchsorted(spoof_sorted, thresholds, side="left") / spoof.size
    return thresholds, far, frr


def compute_eer(trials) -> tuple[float, float]:
    """Return (eer in [0, 1], threshold) for labeled trials."""
    bona, spoof = _split_labels(trials)
    thresholds, far, frr = error_rates(bona, spoof)
    gap = far - frr
    i = int(np.argmax(gap <= 0))  # gap ends at -1, so a crossing always exists
    if gap[i] == 0:
        eer = far[i]
    else:
        a = gap[i - 1] / (gap[i - 1] - gap[i])
        eer = far[i - 1] + a * (far[i] - far[i - 1])
    threshold = float(thresholds[int(np.argmin(np.abs(gap)))])
    return float(eer), threshold


def ensemble_scores(systems, weights, normalize: bool = False) -> list[TrialScore]:
    """Weighted per-utterance sum of scores across systems.

    ``systems`` is a list of trial lists covering the same utt ids; output
    follows the first system's order and carries its labels. With
    ``normalize`` each system is min-max scaled to [0, 1] first.
    """
    if len(systems) != len(weights) or not systems:
        raise ScoreError(f"{len(systems)} systems but {len(weights)} weights")
    maps = []
    for trials in systems:
        scores = {t.utt_id: t.score for t in trials}
        if normalize:
            lo, hi = min(scores.values()), max(scores.values())
            span = hi - lo if hi > lo else 1.0
            scores = {u: (s - lo) / span for u, s in scores.items()}
        maps.append(scores)
    ref = set(maps[0])
    for j, m in enumerate(maps[1:], 2):
        if set(m) != ref:
            missing = sorted(ref - set(m))
            extra = sorted(set(m) - ref)
            raise ScoreError(
                f"system {j} utt ids differ from system 1: missing {missing[:10]}, extra {extra[:10]}"
            )
    out = []
    for t in systems[0]:
        total = 0.0
        for w, m in zip(weights, maps):
            total += w * m[t.utt_id]
        out.append(TrialScore(t.utt_id, total, t.label))
    return out


def format_score(x: float) -> str:
    return repr(float(x))


def write_scores(path, trials):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in trials:
            f.write(f"{t.utt_id}\t{format_score(t.score)}\n")


def read_scores(path) -> list[TrialScore]:
    trials, seen = [], set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise ScoreError(f"{path}:{lineno}: expected 'utt_id<TAB>score'")
        try:
            value = float(fields[1])
        except ValueError:
            raise ScoreError(f"{path}:{lineno}: bad score {fields[1]!r}") from None
        if not math.isfinite(value):
            raise ScoreError(f"{path}:{lineno}: non-finite score")
        if fields[0] in seen:
            raise ScoreError(f"{path}:{lineno}: duplicate utt_id {fields[0]!r}")
        seen.add(fields[0])
        trials.append(TrialScore(fields[0], value))
    return trials


def read_protocol(path) -> dict[str, str]:
    labels = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) < 2 or fields[1] not in ("bonafide", "spoof"):
            raise ScoreError(f"{path}:{lineno}: expected 'utt_id<TAB>bonafide|spoof'")
        labels[fields[0]] = fields[1]
    return labels


def write_protocol(path, labels: dict[str, str]):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt, label in labels.items():
            f.write(f"{utt}\t{label}\n")


def attach_labels(trials, labels: dict[str, str]) -> list[TrialScore]:
    missing = [t.utt_id for t in trials if t.utt_id not in labels]
    if missing:
        raise ScoreError(f"{len(missing)} scored utterances have no protocol label, e.g. {missing[:5]}")
    return [TrialScore(t.utt_id, t.score, labels[t.utt_id]) for t in trials]


def format_eer(eer: float) -> str:
    return f"EER\t{100.0 * eer:.4f}"


def eer_by_group(trials, groups: dict[str, str]) -> dict[str, float]:
    """EER of each attack group against all bona fide trials."""
    bona = [t for t in trials if t.label == "bonafide"]
    out = {}
    for tag in sorted({groups[t.utt_id] for t in trials if t.label == "spoof"}):
        spoof = [t for t in trials if t.label == "spoof" and groups[t.utt_id] == tag]
        out[tag] = compute_eer(bona + spoof)[0]
    return out


def score_manifest(model, rows, config, base_dir=None) -> list[TrialScore]:
    """Score each row independently in inference mode (no SpecAug or augmentation)."""
    import torch

    from .branches import score
    from .frontend import fix_duration, load_waveform, mel_spectrogram
    from .manifest import resolve_audio

    if not rows:
        log.warning("empty manifest: nothing to score")
        return []
    mel_cfg = config.mel_config()
    model.eval()
    trials = []
    with torch.no_grad():
        for row in rows:
            w = fix_duration(load_waveform(resolve_audio(row, base_dir)), config.frontend.duration)
            mel = torch.tensor(mel_spectrogram(w, mel_cfg).values, dtype=torch.float32)
            value = float(score(model(mel.unsqueeze(0)))[0])
            trials.append(TrialScore(row.utt_id, value, row.label))
    return trials
