"""Deterministic synthetic speech-like corpus for end-to-end testing.

Utterances are harmonic tones whose fundamental follows a piecewise-linear
contour in one of two accent patterns — rise-fall or fall-rise — over four
invented speakers.  Ground-truth F0 tracks are written straight from the
analytic contour, so the corpus doubles as a pitch-estimation benchmark
with known answers.  Everything is a pure function of the seed: the same
seed writes byte-identical files.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform, write_wav
from .corpus import EMOTIONS, MANIFEST_COLUMNS
from .errors import ConfigError
from .f0 import F0Track, write_f0

PATTERNS = ("rise-fall", "fall-rise")
EDGE_SILENCE = 0.03  # s of leading/trailing silence
RAMP = 0.010  # s raised-cosine fade at voicing edges


@dataclass(frozen=True)
class SynthSpeaker:
    id: str
    gender: str
    base_f0: float


SPEAKERS = (
    SynthSpeaker("spk_m1", "M", 110.0),
    SynthSpeaker("spk_f1", "F", 205.0),
    SynthSpeaker("spk_m2", "M", 130.0),
    SynthSpeaker("spk_f2", "F", 185.0),
)


@dataclass(frozen=True)
class SynthUtterance:
    """Recipe for one utterance; the audio and F0 file derive from it."""

    id: str
    speaker: SynthSpeaker
    emotion: str
    pattern: str
    n_samples: int
    sample_rate: int
    anchor_times: np.ndarray
    anchor_freqs: np.ndarray

    @property
    def voiced_start(self) -> float:
        return float(self.anchor_times[0])

    @property
    def voiced_end(self) -> float:
        return float(self.anchor_times[-1])

    def f0_at(self, times: np.ndarray) -> np.ndarray:
        """Analytic contour in Hz; 0 outside the voiced span."""
        times = np.asarray(times, dtype=np.float64)
        values = np.interp(times, self.anchor_times, self.anchor_freqs)
        voiced = (times >= self.voiced_start) & (times < self.voiced_end)
        return np.where(voiced, values, 0.0)

    def frame_track(self, frame_shift: float) -> F0Track:
        spf = int(round(frame_shift * self.sample_rate))
        n_frames = -(-self.n_samples // spf)
        times = np.arange(n_frames) * frame_shift
        return F0Track(self.f0_at(times), frame_shift)


def plan_utterance(index: int, rng: np.random.Generator, sample_rate: int,
                   duration_range: tuple[float, float]) -> SynthUtterance:
    speaker = SPEAKERS[index % len(SPEAKERS)]
    emotion = EMOTIONS[index % len(EMOTIONS)]
    pattern = PATTERNS[index % len(PATTERNS)]
    duration = rng.uniform(*duration_range)
    n_samples = int(round(duration * sample_rate))

    start, end = EDGE_SILENCE, duration - EDGE_SILENCE
    mid = start + (end - start) * rng.uniform(0.4, 0.6)
    base = speaker.base_f0
    if pattern == "rise-fall":
        factors = (0.9, rng.uniform(1.2, 1.35), 0.85)
    else:
        factors = (1.15, rng.uniform(0.7, 0.8), 1.1)
    return SynthUtterance(
        id=f"utt{index:03d}_{speaker.id}",
        speaker=speaker,
        emotion=emotion,
        pattern=pattern,
        n_samples=n_samples,
        sample_rate=sample_rate,
        anchor_times=np.array([start, mid, end]),
        anchor_freqs=base * np.array(factors),
    )


HARMONIC_AMPS = (1.0, 0.4, 0.2, 0.1)


def render(utt: SynthUtterance, peak: float = 18000.0) -> Waveform:
    """Additive harmonic synthesis following the utterance's contour."""
    rate = utt.sample_rate
    t = np.arange(utt.n_samples) / rate
    f0 = utt.f0_at(t)
    phase = 2.0 * np.pi * np.cumsum(f0) / rate
    wave = np.zeros(utt.n_samples)
    for k, amp in enumerate(HARMONIC_AMPS, start=1):
        wave += amp * np.sin(k * phase)

    envelope = np.zeros(utt.n_samples)
    voiced = (t >= utt.voiced_start) & (t < utt.voiced_end)
    envelope[voiced] = 1.0
    for edge, sign in ((utt.voiced_start, 1.0), (utt.voiced_end, -1.0)):
        ramp = voiced & (sign * (t - edge) < RAMP)
        envelope[ramp] = 0.5 - 0.5 * np.cos(
            np.pi * sign * (t[ramp] - edge) / RAMP
        )
    wave *= envelope
    top = np.max(np.abs(wave))
    if top > 0:
        wave *= peak / top
    return Waveform(np.rint(wave).astype(np.int16), rate)


def generate_corpus(
    out_dir: str | Path,
    n_utts: int = 48,
    seed: int = 0,
    sample_rate: int = 22050,
    frame_shift: float = 0.005,
    duration_range: tuple[float, float] = (0.5, 0.75),
    test_every: int = 6,
) -> list[SynthUtterance]:
    """Write wavs, F0 tracks, manifests, and a speaker table under out_dir.

    The final 1/``test_every`` of the utterances go to manifest_test.csv,
    the rest to manifest_train.csv; manifest.csv lists all of them.  With
    the default four-speaker rotation the held-out block still covers
    every speaker and both accent patterns.
    """
    if n_utts < 1:
        raise ConfigError(f"n_utts must be >= 1, got {n_utts}")
    if duration_range[0] <= 2 * EDGE_SILENCE:
        raise ConfigError("durations must exceed the silent margins")
    out_dir = Path(out_dir)
    (out_dir / "wavs").mkdir(parents=True, exist_ok=True)
    (out_dir / "f0").mkdir(exist_ok=True)

    rng = np.random.default_rng(seed)
    embeddings = rng.uniform(-1.0, 1.0, (len(SPEAKERS), 50))
    lines = [
        " ".join([spk.id] + [f"{v:.6f}" for v in emb])
        for spk, emb in zip(SPEAKERS, embeddings)
    ]
    (out_dir / "speakers.txt").write_text("\n".join(lines) + "\n")

    utterances = []
    rows = []
    for index in range(n_utts):
        utt = plan_utterance(index, rng, sample_rate, duration_range)
        write_wav(out_dir / "wavs" / f"{utt.id}.wav", render(utt))
        write_f0(out_dir / "f0" / f"{utt.id}.f0", utt.frame_track(frame_shift))
        rows.append({
            "id": utt.id,
            "wav_path": f"wavs/{utt.id}.wav",
            "f0_path": f"f0/{utt.id}.f0",
            "gender": utt.speaker.gender,
            "emotion": utt.emotion,
            "speaker_id": utt.speaker.id,
        })
        utterances.append(utt)

    n_test = n_utts // test_every
    splits = {
        "manifest.csv": rows,
        "manifest_train.csv": rows[: n_utts - n_test],
        "manifest_test.csv": rows[n_utts - n_test:],
    }
    for name, subset in splits.items():
        with open(out_dir / name, "w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=MANIFEST_COLUMNS)
            writer.writeheader()
            writer.writerows(subset)
    return utterances
