"""F0 track handling: text I/O, per-utterance normalization, frame expansion.

Tracks store linear F0 in Hz at a fixed frame shift, with 0 marking unvoiced
frames.  Normalization maps the voiced values of one utterance onto [0, 1]
by its own min and max; unvoiced frames become the reserved code -1.0, which
sits outside the voiced range so the downstream encoder can tell voicing
apart from any legal pitch value.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

UNVOICED = -1.0
DEFAULT_FRAME_SHIFT = 0.005


@dataclass(frozen=True)
class F0Track:
    values: np.ndarray  # Hz per frame, 0 = unvoiced
    frame_shift: float = DEFAULT_FRAME_SHIFT

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size == 0:
            raise DataError("F0 track must be a non-empty 1-D array")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise DataError("F0 values must be finite and non-negative")
        if self.frame_shift <= 0:
            raise DataError(f"frame_shift must be positive, got {self.frame_shift}")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return len(self.values)

    @property
    def duration(self) -> float:
        return len(self.values) * self.frame_shift

    @property
    def voiced_mask(self) -> np.ndarray:
        return self.values > 0


def read_f0(path: str | Path, frame_shift: float = DEFAULT_FRAME_SHIFT) -> F0Track:
    """Read a one-float-per-line F0 file (Hz, 0 = unvoiced)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not a text F0 file ({exc})") from exc
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: not a number: {line!r}") from exc
    if not values:
        raise DataError(f"{path}: no F0 values found")
    try:
        return F0Track(np.array(values), frame_shift)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_f0(path: str | Path, track: F0Track) -> None:
    lines = "".join(f"{v:.6f}\n" for v in track.values)
    Path(path).write_text(lines)


def normalize_f0(track: F0Track, utterance_id: str = "") -> np.ndarray:
    """Min-max normalize voiced frames to [0, 1]; unvoiced become UNVOICED."""
    voiced = track.voiced_mask
    label = f" ({utterance_id})" if utterance_id else ""
    if not np.any(voiced):
        raise DataError(f"all frames unvoiced, cannot normalize F0{label}")
    lo = track.values[voiced].min()
    hi = track.values[voiced].max()
    if hi == lo:
        raise DataError(f"constant voiced F0 ({lo} Hz), cannot normalize{label}")
    out = np.full(len(track), UNVOICED)
    out[voiced] = (track.values[voiced] - lo) / (hi - lo)
    return out


def samples_per_frame(frame_shift: float, sample_rate: int) -> int:
    count = int(round(frame_shift * sample_rate))
    if count <= 0:
        raise DataError(
            f"frame_shift {frame_shift}s spans no samples at {sample_rate} Hz"
        )
    return count


def frames_to_samples(
    values: np.ndarray,
    frame_shift: float,
    sample_rate: int,
    total_length: int | None = None,
) -> np.ndarray:
    """Step-function expansion of per-frame values to per-sample resolution.

    Each frame value is repeated for the frame's duration in samples.  When
    total_length is given, the result is trimmed, or extended by holding the
    final value, to exactly that many samples.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot expand an empty track")
    expanded = np.repeat(values, samples_per_frame(frame_shift, sample_rate))
    if total_length is None:
        return expanded
    if total_length <= 0:
        raise DataError(f"total_length must be positive, got {total_length}")
    if len(expanded) >= total_length:
        return expanded[:total_length]
    pad = np.full(total_length - len(expanded), expanded[-1])
    return np.concatenate([expanded, pad])
