"""Corpus ingestion: manifests, speaker embeddings, global condition vectors.

A corpus is described by a CSV manifest (id, wav_path, f0_path, gender,
emotion, speaker_id) plus a speaker-embedding table mapping each speaker id
to a precomputed 50-dim vector.  The per-utterance global condition is the
100-dim concatenation of the gender one-hot repeated 5x, the emotion one-hot
repeated 10x, and the speaker embedding, so the three blocks carry
comparable weight.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import Waveform, read_wav
from .errors import DataError
from .f0 import F0Track, read_f0, samples_per_frame

GENDERS = ("M", "F")
EMOTIONS = ("neutral", "happy", "joy", "angry")
GENDER_REPEAT = 5
EMOTION_REPEAT = 10
SPEAKER_DIM = 50
CONDITION_DIM = len(GENDERS) * GENDER_REPEAT + len(EMOTIONS) * EMOTION_REPEAT + SPEAKER_DIM

MANIFEST_COLUMNS = ("id", "wav_path", "f0_path", "gender", "emotion", "speaker_id")


@dataclass(frozen=True)
class GlobalCondition:
    gender_onehot: np.ndarray
    emotion_onehot: np.ndarray
    speaker_embedding: np.ndarray
    assembled: np.ndarray = field(init=False)

    def __post_init__(self):
        g = np.asarray(self.gender_onehot, dtype=np.float64)
        e = np.asarray(self.emotion_onehot, dtype=np.float64)
        s = np.asarray(self.speaker_embedding, dtype=np.float64)
        if g.shape != (len(GENDERS),):
            raise DataError(f"gender one-hot must have {len(GENDERS)} dims")
        if e.shape != (len(EMOTIONS),):
            raise DataError(f"emotion one-hot must have {len(EMOTIONS)} dims")
        if s.shape != (SPEAKER_DIM,):
            raise DataError(f"speaker embedding must have {SPEAKER_DIM} dims")
        for onehot, what in ((g, "gender"), (e, "emotion")):
            if not (np.all((onehot == 0) | (onehot == 1)) and onehot.sum() == 1):
                raise DataError(f"{what} vector is not one-hot")
        assembled = np.concatenate(
            [np.repeat(g, GENDER_REPEAT), np.repeat(e, EMOTION_REPEAT), s]
        )
        object.__setattr__(self, "gender_onehot", g)
        object.__setattr__(self, "emotion_onehot", e)
        object.__setattr__(self, "speaker_embedding", s)
        object.__setattr__(self, "assembled", assembled)

    @classmethod
    def from_labels(
        cls, gender: str, emotion: str, speaker_embedding: np.ndarray
    ) -> "GlobalCondition":
        if gender not in GENDERS:
            raise DataError(f"unknown gender {gender!r}, expected one of {GENDERS}")
        if emotion not in EMOTIONS:
            raise DataError(f"unknown emotion {emotion!r}, expected one of {EMOTIONS}")
        g = np.zeros(len(GENDERS))
        g[GENDERS.index(gender)] = 1.0
        e = np.zeros(len(EMOTIONS))
        e[EMOTIONS.index(emotion)] = 1.0
        return cls(g, e, speaker_embedding)


@dataclass(frozen=True)
class Utterance:
    id: str
    waveform: Waveform
    f0: F0Track
    condition: GlobalCondition
    speaker_id: str = ""

    def __post_init__(self):
        spf = samples_per_frame(self.f0.frame_shift, self.waveform.sample_rate)
        frames_needed = -(-len(self.waveform) // spf)  # ceil division
        if abs(len(self.f0) - frames_needed) > 1:
            raise DataError(
                f"utterance {self.id}: F0 track has {len(self.f0)} frames but the "
                f"waveform spans {frames_needed}"
            )


def read_speaker_table(path: str | Path) -> dict[str, np.ndarray]:
    """Parse `speaker_id v1 .. v50` lines into an embedding lookup."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    table: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        parts = line.split()
        if not parts:
            continue
        speaker, raw = parts[0], parts[1:]
        if len(raw) != SPEAKER_DIM:
            raise DataError(
                f"{path}:{lineno}: speaker {speaker!r} has {len(raw)} values, "
                f"expected {SPEAKER_DIM}"
            )
        try:
            table[speaker] = np.array([float(v) for v in raw])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not table:
        raise DataError(f"{path}: no speaker entries found")
    return table


def read_manifest(path: str | Path) -> list[dict[str, str]]:
    path = Path(path)
    try:
        with path.open(newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
                raise DataError(
                    f"{path}: manifest header must be {','.join(MANIFEST_COLUMNS)}"
                )
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if any(row.get(col) in (None, "") for col in MANIFEST_COLUMNS):
                    raise DataError(f"{path}:{lineno}: incomplete manifest row")
                rows.append({col: row[col].strip() for col in MANIFEST_COLUMNS})
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: manifest lists no utterances")
    return rows


def load_corpus(
    manifest_path: str | Path,
    speaker_table_path: str | Path,
    sample_rate: int = 22050,
    frame_shift: float = 0.005,
) -> list[Utterance]:
    """Load every utterance in the manifest, reporting all failures at once.

    Relative wav/F0 paths are resolved against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    rows = read_manifest(manifest_path)
    speakers = read_speaker_table(speaker_table_path)
    base = manifest_path.parent

    utterances: list[Utterance] = []
    failures: list[str] = []
    for row in rows:
        try:
            wav = read_wav(base / row["wav_path"], expected_rate=sample_rate)
            track = read_f0(base / row["f0_path"], frame_shift)
            if row["speaker_id"] not in speakers:
                raise DataError(f"unknown speaker id {row['speaker_id']!r}")
            condition = GlobalCondition.from_labels(
                row["gender"], row["emotion"], speakers[row["speaker_id"]]
            )
            utterances.append(
                Utterance(row["id"], wav, track, condition, row["speaker_id"])
            )
        except DataError as exc:
            failures.append(f"{row['id']}: {exc}")
    if failures:
        raise DataError(
            f"{len(failures)} of {len(rows)} utterances failed to load:\n  "
            + "\n  ".join(failures)
        )
    return utterances
