"""Experiment configuration as flat ``section.key = value`` text.

Lines starting with ``#`` are comments. Unknown keys are an error. Every key
with its default is listed by ``envspoof inspect-config`` with no file.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields


class ConfigError(ValueError):
    pass


@dataclass
class FrontendSection:
    sample_rate: int = 16000
    duration: float = 4.0
    frame_length: float = 0.025
    frame_shift: float = 0.010
    n_mels: int = 128
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10


@dataclass
class SpecAugSection:
    enabled: bool = True
    n_freq_masks: int = 2
    max_freq_width: int = 16
    n_time_masks: int = 2
    max_time_width: int = 40


@dataclass
class EncoderSection:
    depth: int = 12
    dim: int = 64
    heads: int = 4
    mlp_ratio: float = 4.0
    patch_size: int = 16


@dataclass
class FusionSection:
    mode: str = "se_gate"
    k: int = 4
    se_reduction: int = 2


@dataclass
class SplitSection:
    mode: str = "channel"


@dataclass
class BranchSection:
    dim: int = 32
    layers: int = 2


@dataclass
class TrainingSection:
    batch_size: int = 8
    epochs: int = 3
    max_steps: int = 0  # 0 = no cap
    lr: float = 1e-4
    w_fake: float = 0.1
    w_real: float = 0.9
    checkpoint_every: int = 1


@dataclass
class AugmentationSection:
    enabled: bool = False
    ratio: float = 0.3
    gl_iterations: int = 32


@dataclass
class ExperimentConfig:
    seed: int = 0
    frontend: FrontendSection = field(default_factory=FrontendSection)
    specaug: SpecAugSection = field(default_factory=SpecAugSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    split: SplitSection = field(default_factory=SplitSection)
    branch: BranchSection = field(default_factory=BranchSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    augmentation: AugmentationSection = field(default_factory=AugmentationSection)

    def mel_config(self):
        from .frontend import MelConfig

        f = self.frontend
        return MelConfig(f.sample_rate, f.frame_length, f.frame_shift, f.n_mels, f.fmin, f.fmax, f.log_floor)

    def specaug_config(self):
        from .frontend import SpecAugConfig

        s = self.specaug
        return SpecAugConfig(
            s.n_freq_masks, s.max_freq_width, s.n_time_masks, s.max_time_width,
            math.log(self.frontend.log_floor),
        )

    def num_frames(self) -> int:
        mel = self.mel_config()
        n = int(round(self.frontend.duration * self.frontend.sample_rate))
        return mel.num_frames(n)

    def grid_size(self) -> tuple[int, int]:
        p = self.encoder.patch_size
        return self.frontend.n_mels // p, self.num_frames() // p

    def model_kwargs(self) -> dict:
        e = self.encoder
        return dict(
            n_mels=self.frontend.n_mels,
            max_frames=self.num_frames(),
            patch_size=e.patch_size,
            dim=e.dim,
            depth=e.depth,
            heads=e.heads,
            mlp_ratio=e.mlp_ratio,
            fusion=self.fusion.mode,
            k=self.fusion.k,
            se_reduction=self.fusion.se_reduction,
            split=self.split.mode,
            branch_dim=self.branch.dim,
            branch_layers=self.branch.layers,
        )

    def validate(self):
        """Raise ConfigError naming the offending keys on inconsistency."""
        e, fr = self.encoder, self.frontend
        problems = []
        if not 1 <= self.fusion.k <= e.depth:
            problems.append(f"fusion.k = {self.fusion.k} must lie in [1, encoder.depth = {e.depth}]")
        if self.fusion.mode not in ("concat", "cnn_gate", "se_gate"):
            problems.append(f"fusion.mode = {self.fusion.mode!r} is not concat|cnn_gate|se_gate")
        if self.split.mode not in ("frequency", "channel", "none"):
            problems.append(f"split.mode = {self.split.mode!r} is not frequency|channel|none")
        if e.dim % e.heads:
            problems.append(f"encoder.dim = {e.dim} is not divisible by encoder.heads = {e.heads}")
        if fr.n_mels % e.patch_size:
            problems.append(
                f"frontend.n_mels = {fr.n_mels} is not divisible by encoder.patch_size = {e.patch_size}"
            )
        elif self.split.mode == "frequency" and (fr.n_mels // e.patch_size) % 2:
            problems.append(
                f"split.mode = frequency needs an even patch-row count "
                f"(frontend.n_mels / encoder.patch_size = {fr.n_mels // e.patch_size})"
            )
        if self.split.mode == "channel" and e.dim % 2:
            problems.append(f"split.mode = channel needs an even encoder.dim, got {e.dim}")
        try:
            frames = self.num_frames()
            if frames < e.patch_size:
                problems.append(
                    f"frontend.duration = {fr.duration} yields {frames} frames, fewer than encoder.patch_size"
                )
        except ValueError as exc:
            problems.append(f"frontend: {exc}")
        t = self.training
        if t.batch_size < 1 or t.epochs < 1:
            problems.append("training.batch_size and training.epochs must be >= 1")
        if t.w_fake <= 0 or t.w_real <= 0:
            problems.append("training.w_fake and training.w_real must be positive")
        if not 0 <= self.augmentation.ratio <= 1:
            problems.append(f"augmentation.ratio = {self.augmentation.ratio} must lie in [0, 1]")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_flat(self) -> dict[str, object]:
        out = {"seed": self.seed}
        for f in fields(self):
            section = getattr(self, f.name)
            if dataclasses.is_dataclass(section):
                for sf in fields(section):
                    out[f"{f.name}.{sf.name}"] = getattr(section, sf.name)
        return out

    def dumps(self) -> str:
        return "".join(f"{key} = {_format(value)}\n" for key, value in self.to_flat().items())

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as f:
            return cls.loads(f.read())

    def set(self, key: str, value: str):
        if key == "seed":
            self.seed = _coerce(int, value, key)
            return
        section_name, _, name = key.partition(".")
        section = getattr(self, section_name, None)
        if not dataclasses.is_dataclass(section) or name not in {f.name for f in fields(section)}:
            raise ConfigError(f"unknown config key {key!r}")
        default = getattr(type(section)(), name)
        setattr(section, name, _coerce(type(default), value, key))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(kind, value: str, key: str):
    try:
        if kind is bool:
            if value.lower() in ("true", "1", "yes", "on"):
                return True
            if value.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        return kind(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}") from None


def full_preset() -> ExperimentConfig:
    """Full-size settings: 768-wide tokens, batch 32, 20 epochs."""
    cfg = ExperimentConfig()
    cfg.encoder.dim = 768
    cfg.encoder.heads = 12
    cfg.training.batch_size = 32
    cfg.training.epochs = 20
    return cfg


def desk_preset() -> ExperimentConfig:
    return ExperimentConfig()
