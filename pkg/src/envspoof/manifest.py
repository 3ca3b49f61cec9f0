"""Dataset manifests: ``utt_id<TAB>path<TAB>label<TAB>attack_tag`` per line."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

LABELS = ("bonafide", "spoof")


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ManifestRow:
    utt_id: str
    path: str
    label: str
    attack_tag: str = "-"

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"{self.utt_id}: label must be one of {LABELS}, got {self.label!r}")
        for value in (self.utt_id, self.path, self.attack_tag):
            if not value or any(c in value for c in "\t\n\r"):
                raise ManifestError(f"invalid manifest field {value!r}")


def check_unique(rows):
    seen = set()
    for row in rows:
        if row.utt_id in seen:
            raise ManifestError(f"duplicate utt_id {row.utt_id!r}")
        seen.add(row.utt_id)


def format_manifest(rows) -> str:
    return "".join(f"{r.utt_id}\t{r.path}\t{r.label}\t{r.attack_tag}\n" for r in rows)


def parse_manifest(text: str) -> list[ManifestRow]:
    rows = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestError(f"line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        rows.append(ManifestRow(*fields))
    check_unique(rows)
    return rows


def read_manifest(path) -> list[ManifestRow]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def write_manifest(path, rows):
    check_unique(rows)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_manifest(rows))


def resolve_audio(row: ManifestRow, base_dir=None) -> Path:
    """Audio path for a row; relative paths are taken from ``base_dir``."""
    p = Path(row.path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    if not p.is_file():
        raise ManifestError(f"{row.utt_id}: audio file not found: {p}")
    return p
