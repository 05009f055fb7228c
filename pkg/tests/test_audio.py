"""Waveform I/O, coarse/fine byte split, amplitude normalization."""
import struct
import wave

import numpy as np
import pytest

from pitchvq.audio import (
    Waveform,
    normalize_amplitude,
    read_wav,
    recombine,
    split_coarse_fine,
    write_wav,
)
from pitchvq.errors import DataError


class TestWaveform:
    def test_rejects_empty(self):
        with pytest.raises(DataError):
            Waveform(np.array([], dtype=np.int16))

    def test_rejects_bad_rate(self):
        with pytest.raises(DataError):
            Waveform(np.array([1], dtype=np.int16), sample_rate=0)

    def test_accepts_in_range_int_array(self):
        w = Waveform(np.array([0, 100, -100]))
        assert w.samples.dtype == np.int16

    def test_rejects_out_of_range(self):
        with pytest.raises(DataError):
            Waveform(np.array([40000]))

    def test_duration(self):
        w = Waveform(np.zeros(22050, dtype=np.int16) + 1, sample_rate=22050)
        assert w.duration == pytest.approx(1.0)


class TestSplitRecombine:
    @pytest.mark.parametrize("s,c,f", [(-32768, 0, 0), (32767, 255, 255), (0, 128, 0)])
    def test_known_corners(self, s, c, f):
        assert split_coarse_fine(s) == (c, f)

    @pytest.mark.parametrize("c,f,s", [(0, 0, -32768), (128, 0, 0), (255, 255, 32767)])
    def test_recombine_known(self, c, f, s):
        assert recombine(c, f) == s

    def test_roundtrip_exhaustive(self):
        every = np.arange(-32768, 32768, dtype=np.int64)
        c, f = split_coarse_fine(every)
        assert c.dtype == np.uint8 and f.dtype == np.uint8
        back = recombine(c, f)
        np.testing.assert_array_equal(back, every.astype(np.int16))

    def test_split_rejects_out_of_range(self):
        with pytest.raises(DataError):
            split_coarse_fine(32768)

    def test_recombine_rejects_bad_bytes(self):
        with pytest.raises(DataError):
            recombine(256, 0)

    def test_vectorized_matches_scalar(self, rng):
        samples = rng.integers(-32768, 32768, size=200)
        c, f = split_coarse_fine(samples)
        for i, s in enumerate(samples):
            cs, fs = split_coarse_fine(int(s))
            assert (c[i], f[i]) == (cs, fs)


class TestNormalizeAmplitude:
    def test_constant_at_target_unchanged(self):
        w = Waveform(np.full(100, 500, dtype=np.int16))
        out, clipped = normalize_amplitude(w, 500.0)
        np.testing.assert_array_equal(out.samples, w.samples)
        assert clipped == 0

    def test_scale_invariance_within_one_lsb(self, rng):
        base = (1000 * np.sin(np.linspace(0, 40, 4000))).astype(np.int16)
        w1, _ = normalize_amplitude(Waveform(base), 800.0)
        w2, _ = normalize_amplitude(Waveform((base * 2).astype(np.int16)), 800.0)
        assert np.max(np.abs(w1.samples.astype(int) - w2.samples.astype(int))) <= 1

    def test_sine_reaches_target_amplitude(self):
        # RMS of a sine is amplitude / sqrt(2); asking for 2000/sqrt(2)
        # should rescale a 1000-amplitude sine to amplitude 2000.
        t = np.arange(22050)
        base = np.rint(1000 * np.sin(2 * np.pi * 440.137 * t / 22050)).astype(np.int16)
        out, clipped = normalize_amplitude(Waveform(base), 2000.0 / np.sqrt(2))
        assert clipped == 0
        assert abs(int(np.max(np.abs(out.samples))) - 2000) <= 1

    def test_idempotent_within_one_lsb(self, rng):
        base = (3000 * np.sin(np.linspace(0, 55, 5000))).astype(np.int16)
        once, _ = normalize_amplitude(Waveform(base), 1642.0)
        twice, _ = normalize_amplitude(once, 1642.0)
        assert np.max(np.abs(once.samples.astype(int) - twice.samples.astype(int))) <= 1

    def test_all_zero_rejected(self):
        with pytest.raises(DataError, match="all-zero"):
            normalize_amplitude(Waveform(np.zeros(10, dtype=np.int16) * 0 + np.int16(0)), 100.0)

    def test_clipping_counted(self):
        w = Waveform(np.array([30000, -30000, 10, -10], dtype=np.int16))
        out, clipped = normalize_amplitude(w, 32000.0)
        assert clipped >= 2
        assert out.samples.max() == 32767

    def test_silence_padding_does_not_dilute(self):
        tone = np.full(100, 1000, dtype=np.int16)
        padded = np.concatenate([np.zeros(900, dtype=np.int16), tone])
        out, _ = normalize_amplitude(Waveform(padded), 500.0)
        active = out.samples[out.samples != 0]
        assert np.sqrt(np.mean(active.astype(float) ** 2)) == pytest.approx(500.0, abs=1.0)


class TestWavIO:
    def test_roundtrip(self, tmp_path, rng):
        samples = rng.integers(-20000, 20000, size=4096).astype(np.int16)
        w = Waveform(samples, 22050)
        path = tmp_path / "x.wav"
        write_wav(path, w)
        back = read_wav(path)
        np.testing.assert_array_equal(back.samples, samples)
        assert back.sample_rate == 22050

    def test_rejects_stereo(self, tmp_path):
        path = tmp_path / "stereo.wav"
        with wave.open(str(path), "wb") as handle:
            handle.setnchannels(2)
            handle.setsampwidth(2)
            handle.setframerate(22050)
            handle.writeframes(b"\x00\x00" * 64)
        with pytest.raises(DataError, match="mono"):
            read_wav(path)

    def test_rejects_8bit(self, tmp_path):
        path = tmp_path / "byte.wav"
        with wave.open(str(path), "wb") as handle:
            handle.setnchannels(1)
            handle.setsampwidth(1)
            handle.setframerate(22050)
            handle.writeframes(b"\x80" * 64)
        with pytest.raises(DataError, match="16-bit"):
            read_wav(path)

    def test_rejects_float_format(self, tmp_path):
        # hand-built IEEE-float WAV header (format tag 3)
        payload = struct.pack("<4f", 0.0, 0.5, -0.5, 1.0)
        fmt = struct.pack("<HHIIHH", 3, 1, 22050, 22050 * 4, 4, 32)
        body = b"WAVEfmt " + struct.pack("<I", len(fmt)) + fmt
        body += b"data" + struct.pack("<I", len(payload)) + payload
        blob = b"RIFF" + struct.pack("<I", len(body)) + body
        path = tmp_path / "float.wav"
        path.write_bytes(blob)
        with pytest.raises(DataError):
            read_wav(path)

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "noise.bin"
        path.write_bytes(b"this is not audio")
        with pytest.raises(DataError):
            read_wav(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_wav(tmp_path / "absent.wav")

    def test_unexpected_rate_rejected(self, tmp_path):
        w = Waveform(np.ones(100, dtype=np.int16), 16000)
        path = tmp_path / "x.wav"
        write_wav(path, w)
        with pytest.raises(DataError, match="16000"):
            read_wav(path, expected_rate=22050)
