"""PCM waveform handling: WAV I/O, amplitude normalization, coarse/fine split.

Waveforms are 16-bit signed integer arrays.  Each sample also has a two-byte
factorization used by the decoder's dual-softmax output: with the unsigned
offset u = s + 32768, the coarse byte is u // 256 and the fine byte u % 256.
"""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

INT16_MIN = -32768
INT16_MAX = 32767
DEFAULT_SAMPLE_RATE = 22050


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray  # int16
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")
        samples = np.asarray(self.samples)
        if samples.ndim != 1 or samples.size == 0:
            raise DataError("waveform must be a non-empty 1-D sample array")
        if samples.dtype != np.int16:
            if not np.array_equal(samples, samples.astype(np.int16)):
                raise DataError("waveform samples outside the 16-bit range")
            samples = samples.astype(np.int16)
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def read_wav(path: str | Path, expected_rate: int | None = None) -> Waveform:
    """Load a RIFF WAV file; only 16-bit mono PCM is accepted."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as handle:
            channels = handle.getnchannels()
            width = handle.getsampwidth()
            rate = handle.getframerate()
            n = handle.getnframes()
            raw = handle.readframes(n)
    except (wave.Error, EOFError) as exc:
        raise DataError(f"{path}: not a readable WAV file ({exc})") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if channels != 1:
        raise DataError(f"{path}: expected mono audio, found {channels} channels")
    if width != 2:
        raise DataError(f"{path}: expected 16-bit PCM, found {8 * width}-bit")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(
            f"{path}: sample rate {rate} does not match expected {expected_rate}"
        )
    samples = np.frombuffer(raw, dtype="<i2").astype(np.int16)
    if samples.size == 0:
        raise DataError(f"{path}: WAV file contains no samples")
    return Waveform(samples, rate)


def write_wav(path: str | Path, waveform: Waveform) -> None:
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(waveform.sample_rate)
        handle.writeframes(waveform.samples.astype("<i2").tobytes())


def split_coarse_fine(samples):
    """Return the (coarse, fine) byte pair for int16 samples.

    Accepts a scalar or an array; arrays come back as a pair of uint8 arrays.
    """
    arr = np.asarray(samples, dtype=np.int64)
    if np.any(arr < INT16_MIN) or np.any(arr > INT16_MAX):
        raise DataError("sample outside the 16-bit signed range")
    unsigned = arr + 32768
    coarse = unsigned // 256
    fine = unsigned % 256
    if np.isscalar(samples) or arr.ndim == 0:
        return int(coarse), int(fine)
    return coarse.astype(np.uint8), fine.astype(np.uint8)


def recombine(coarse, fine):
    """Inverse of split_coarse_fine."""
    c = np.asarray(coarse, dtype=np.int64)
    f = np.asarray(fine, dtype=np.int64)
    if np.any((c < 0) | (c > 255)) or np.any((f < 0) | (f > 255)):
        raise DataError("coarse/fine bytes must lie in [0, 255]")
    s = c * 256 + f - 32768
    if np.isscalar(coarse) or c.ndim == 0:
        return int(s)
    return s.astype(np.int16)


def normalize_amplitude(waveform: Waveform, target_rms: float):
    """Scale so the RMS of active (nonzero) samples hits target_rms.

    Returns (normalized waveform, number of samples clipped by the rescale).
    A stand-in for a true active-speech-level meter: digital silence is
    excluded so padded stretches do not dilute the level estimate.
    """
    if target_rms <= 0:
        raise DataError(f"target_rms must be positive, got {target_rms}")
    x = waveform.samples.astype(np.float64)
    active = x != 0
    if not np.any(active):
        raise DataError("cannot normalize an all-zero waveform")
    rms = np.sqrt(np.mean(x[active] ** 2))
    scaled = np.rint(x * (target_rms / rms))
    clip_count = int(np.sum((scaled < INT16_MIN) | (scaled > INT16_MAX)))
    clipped = np.clip(scaled, INT16_MIN, INT16_MAX).astype(np.int16)
    return Waveform(clipped, waveform.sample_rate), clip_count
