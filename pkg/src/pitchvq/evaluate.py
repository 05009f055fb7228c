"""Objective evaluation: F0 estimation, log-F0 distortion, corpus reports.

Pitch is estimated with a YIN-style cumulative-mean-normalized difference
function plus parabolic interpolation, which is deterministic and needs no
trained model.  Reconstruction quality is summarized as the RMSE between
the natural-log F0 tracks of input and reconstruction over frames voiced
in both, aggregated per speaker.
"""
from __future__ import annotations

import csv
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import Waveform
from .corpus import Utterance, load_corpus
from .errors import DataError, PitchVQError
from .f0 import samples_per_frame
from .training import TrainState, load_checkpoint, prepare_utterance

DEFAULT_WINDOW = 0.025  # s, YIN integration window
WORKERS_ENV = "PITCHVQ_WORKERS"
ENERGY_FLOOR = 1e-4  # RMS (full scale 1.0) below which a frame is silent


@dataclass(frozen=True)
class F0Estimate:
    """Per-frame pitch estimate; 0 Hz marks unvoiced frames."""

    values: np.ndarray  # Hz
    frame_shift: float
    confidence: np.ndarray  # per-frame, 1 = clean periodicity

    def __post_init__(self):
        if self.values.shape != self.confidence.shape:
            raise DataError("F0 values and confidence must align")

    def __len__(self):
        return len(self.values)

    @property
    def voiced_mask(self) -> np.ndarray:
        return self.values > 0


def _difference_function(segment: np.ndarray, window: int, tau_max: int
                         ) -> np.ndarray:
    """d(tau) = sum_{j<W} (x[j] - x[j+tau])^2 for tau in [0, tau_max]."""
    cross = np.correlate(segment, segment[:window], mode="valid")
    sq = np.concatenate(([0.0], np.cumsum(segment * segment)))
    tails = sq[np.arange(tau_max + 1) + window] - sq[: tau_max + 1]
    d = sq[window] + tails - 2.0 * cross[: tau_max + 1]
    return np.maximum(d, 0.0)


def _cmndf(d: np.ndarray) -> np.ndarray:
    out = np.ones_like(d)
    running = np.cumsum(d[1:])
    good = running > 0
    out[1:][good] = d[1:][good] * np.arange(1, len(d))[good] / running[good]
    return out


def _parabolic_refine(curve: np.ndarray, tau: int) -> float:
    if tau <= 0 or tau >= len(curve) - 1:
        return float(tau)
    left, mid, right = curve[tau - 1], curve[tau], curve[tau + 1]
    denom = left - 2.0 * mid + right
    if abs(denom) < 1e-12:
        return float(tau)
    shift = 0.5 * (left - right) / denom
    return tau + float(np.clip(shift, -0.5, 0.5))


def estimate_f0(
    waveform: Waveform,
    f0_min: float = 50.0,
    f0_max: float = 600.0,
    threshold: float = 0.12,
    frame_shift: float = 0.005,
    window_s: float = DEFAULT_WINDOW,
) -> F0Estimate:
    """YIN-style pitch track at 5 ms resolution.

    A frame is voiced when the normalized difference function dips below
    ``threshold`` somewhere in the search band; the dip location is refined
    by parabolic interpolation.  Quiet frames are silenced outright.
    """
    rate = waveform.sample_rate
    x = waveform.samples.astype(np.float64) / 32768.0
    window = int(round(window_s * rate))
    if len(x) < window:
        raise DataError(
            f"waveform has {len(x)} samples but one analysis window "
            f"needs {window}"
        )
    tau_min = max(2, int(np.ceil(rate / f0_max)))
    tau_max = int(np.floor(rate / f0_min))
    tau_max = min(tau_max, len(x) - window)
    hop = samples_per_frame(frame_shift, rate)
    seg_len = window + tau_max
    n_frames = -(-len(x) // hop)

    values = np.zeros(n_frames)
    confidence = np.zeros(n_frames)
    if tau_max <= tau_min:
        return F0Estimate(values, frame_shift, confidence)

    for i in range(n_frames):
        center = i * hop
        start = int(np.clip(center - seg_len // 2, 0, len(x) - seg_len))
        segment = x[start:start + seg_len]
        if np.sqrt(np.mean(segment[:window] ** 2)) < ENERGY_FLOOR:
            continue
        d = _difference_function(segment, window, tau_max)
        nd = _cmndf(d)

        below = np.nonzero(nd[tau_min:tau_max] < threshold)[0]
        if below.size == 0:
            continue
        tau = tau_min + int(below[0])
        while tau + 1 < tau_max and nd[tau + 1] < nd[tau]:
            tau += 1
        refined = _parabolic_refine(nd, tau)
        f0 = rate / refined
        if not (f0_min <= f0 <= f0_max):
            continue
        values[i] = f0
        confidence[i] = max(0.0, 1.0 - nd[tau])
    return F0Estimate(values, frame_shift, confidence)


def log_f0_rmse(ref, hyp) -> float:
    """RMSE of natural-log F0 over frames voiced in both tracks."""
    a = np.asarray(getattr(ref, "values", ref), dtype=np.float64)
    b = np.asarray(getattr(hyp, "values", hyp), dtype=np.float64)
    if abs(len(a) - len(b)) > 2:
        warnings.warn(
            f"F0 tracks differ by {abs(len(a) - len(b))} frames; "
            "truncating to the shorter one",
            stacklevel=2,
        )
    n = min(len(a), len(b))
    a, b = a[:n], b[:n]
    both = (a > 0) & (b > 0)
    if not np.any(both):
        raise DataError("no frames voiced in both tracks")
    diff = np.log(a[both]) - np.log(b[both])
    return float(np.sqrt(np.mean(diff * diff)))


# -- corpus-level evaluation --------------------------------------------

@dataclass(frozen=True)
class UtteranceEval:
    id: str
    speaker: str
    rmse: float
    voiced_coverage: float  # mutually voiced share of reference voiced frames
    frames: int


@dataclass(frozen=True)
class EvalReport:
    variant: str
    utterances: tuple[UtteranceEval, ...]
    failures: tuple[tuple[str, str], ...]

    @property
    def per_speaker(self) -> dict[str, float]:
        groups: dict[str, list[float]] = {}
        for utt in self.utterances:
            groups.setdefault(utt.speaker, []).append(utt.rmse)
        return {spk: float(np.mean(vals)) for spk, vals in sorted(groups.items())}

    @property
    def mean_rmse(self) -> float:
        if not self.utterances:
            raise DataError("no utterances evaluated")
        return float(np.mean([u.rmse for u in self.utterances]))

    def write_csv(self, path: str | Path) -> None:
        """Speaker rows plus a corpus average; MOS column left blank."""
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["speaker", "variant", "log_f0_rmse", "p563_mos"])
            for spk, rmse in self.per_speaker.items():
                writer.writerow([spk, self.variant, f"{rmse:.6f}", ""])
            writer.writerow(["average", self.variant, f"{self.mean_rmse:.6f}", ""])

    def write_utterance_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["id", "speaker", "log_f0_rmse", "voiced_coverage", "frames"]
            )
            for utt in self.utterances:
                writer.writerow([
                    utt.id, utt.speaker, f"{utt.rmse:.6f}",
                    f"{utt.voiced_coverage:.4f}", utt.frames,
                ])

    def summary(self) -> str:
        lines = [f"variant {self.variant}: {len(self.utterances)} utterances"]
        for spk, rmse in self.per_speaker.items():
            lines.append(f"  {spk}: log-F0 RMSE {rmse:.4f}")
        lines.append(f"  average: {self.mean_rmse:.4f}")
        for uid, message in self.failures:
            lines.append(f"  skipped {uid}: {message}")
        return "\n".join(lines)


_WORKER_STATE: TrainState | None = None


def _worker_init(ckpt_path):
    global _WORKER_STATE
    _WORKER_STATE = load_checkpoint(ckpt_path)


def _evaluate_one(state: TrainState, utt: Utterance, seed_key: tuple
                  ) -> UtteranceEval:
    cfg = state.cfg
    prep = prepare_utterance(utt, cfg)
    rng = np.random.default_rng(list(seed_key))
    result = state.model.reconstruct(
        prep.samples, prep.f0_stream, prep.cond, rng
    )
    rate = utt.waveform.sample_rate
    ref = estimate_f0(
        Waveform(prep.samples[: len(result.samples)], rate),
        f0_min=cfg.f0_min, f0_max=cfg.f0_max, threshold=cfg.yin_threshold,
        frame_shift=cfg.frame_shift,
    )
    hyp = estimate_f0(
        Waveform(result.samples, rate),
        f0_min=cfg.f0_min, f0_max=cfg.f0_max, threshold=cfg.yin_threshold,
        frame_shift=cfg.frame_shift,
    )
    rmse = log_f0_rmse(ref, hyp)
    n = min(len(ref), len(hyp))
    mutual = int(np.sum(ref.voiced_mask[:n] & hyp.voiced_mask[:n]))
    ref_voiced = max(1, int(np.sum(ref.voiced_mask[:n])))
    speaker = utt.speaker_id or utt.id
    return UtteranceEval(utt.id, speaker, rmse, mutual / ref_voiced, n)


def _worker_eval(utt: Utterance, seed_key: tuple):
    try:
        return _evaluate_one(_WORKER_STATE, utt, seed_key)
    except PitchVQError as exc:
        return (utt.id, str(exc))


def evaluate_corpus(
    ckpt_path: str | Path,
    manifest_path: str | Path,
    speaker_table_path: str | Path,
    workers: int | None = None,
    seed: int | None = None,
) -> EvalReport:
    """Reconstruct every test utterance free-running and score log-F0 RMSE.

    Utterances that fail to generate are excluded and listed in the report.
    Each utterance draws from its own seed stream, so results are identical
    whether run serially or with ``workers`` processes (default: the
    PITCHVQ_WORKERS environment variable, else serial).
    """
    state = load_checkpoint(ckpt_path)
    utterances = load_corpus(
        manifest_path, speaker_table_path,
        sample_rate=state.cfg.sample_rate, frame_shift=state.cfg.frame_shift,
    )
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    if seed is None:
        seed = state.cfg.seed

    jobs = [(utt, (seed, index)) for index, utt in enumerate(utterances)]
    results = []
    if workers > 1:
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_worker_init,
            initargs=(str(ckpt_path),),
        ) as pool:
            results = list(pool.map(_worker_eval, *zip(*jobs)))
    else:
        for utt, seed_key in jobs:
            try:
                results.append(_evaluate_one(state, utt, seed_key))
            except PitchVQError as exc:
                results.append((utt.id, str(exc)))

    scored = tuple(r for r in results if isinstance(r, UtteranceEval))
    failed = tuple(r for r in results if not isinstance(r, UtteranceEval))
    return EvalReport(state.cfg.mode, scored, failed)
