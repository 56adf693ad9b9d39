"""Corpus manifests: one record per utterance, stored as UTF-8 TSV."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import EmptyManifest

EMOTION_LABELS = ("neutral", "happy", "sad", "angry", "surprise")
HEADER = ("utterance_id", "wav_path", "dataset_id", "emotion", "strength")


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    wav_path: str
    dataset_id: str
    emotion: str
    strength: float | None = None

    def __post_init__(self):
        if self.emotion not in EMOTION_LABELS:
            raise ValueError(f"{self.utterance_id}: unknown emotion {self.emotion!r}")
        if not self.dataset_id:
            raise ValueError(f"{self.utterance_id}: empty dataset_id")

    def with_strength(self, strength: float | None) -> "ManifestRecord":
        return replace(self, strength=strength)


class CorpusManifest(list):
    """A list of :class:`ManifestRecord` with unique utterance ids."""

    def __init__(self, records=(), root: Path | None = None):
        super().__init__(records)
        self.root = root
        ids = [r.utterance_id for r in self]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate utterance ids: {dupes[:5]}")

    def by_id(self) -> dict:
        return {r.utterance_id: r for r in self}

    def wav_file(self, record: ManifestRecord) -> Path:
        path = Path(record.wav_path)
        if not path.is_absolute() and self.root is not None:
            path = self.root / path
        return path

    def datasets(self) -> list[str]:
        return sorted({r.dataset_id for r in self})


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header is None or tuple(header[: len(HEADER)]) != HEADER:
            raise EmptyManifest(f"{path}: missing or wrong header")
        records = []
        for row in reader:
            if not row:
                continue
            uid, wav, ds, emotion, strength = (row + [""] * 5)[:5]
            records.append(ManifestRecord(uid, wav, ds, emotion, float(strength) if strength else None))
    return CorpusManifest(records, root=path.parent)


def write_manifest(path, manifest) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join(HEADER) + "\n")
        for r in manifest:
            strength = "" if r.strength is None else f"{r.strength:.6f}"
            fh.write(f"{r.utterance_id}\t{r.wav_path}\t{r.dataset_id}\t{r.emotion}\t{strength}\n")
