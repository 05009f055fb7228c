"""F0 track parsing, normalization, and frame-to-sample expansion."""
import numpy as np
import pytest

from pitchvq.errors import DataError
from pitchvq.f0 import (
    UNVOICED,
    F0Track,
    frames_to_samples,
    normalize_f0,
    read_f0,
    samples_per_frame,
    write_f0,
)


class TestF0Track:
    def test_rejects_negative(self):
        with pytest.raises(DataError):
            F0Track(np.array([100.0, -5.0]))

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            F0Track(np.array([100.0, np.nan]))

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            F0Track(np.array([]))

    def test_duration_and_voicing(self):
        t = F0Track(np.array([100.0, 0.0, 200.0]), frame_shift=0.005)
        assert t.duration == pytest.approx(0.015)
        np.testing.assert_array_equal(t.voiced_mask, [True, False, True])


class TestNormalizeF0:
    def test_three_voiced_values(self):
        out = normalize_f0(F0Track(np.array([100.0, 200.0, 150.0])))
        np.testing.assert_allclose(out, [0.0, 1.0, 0.5])

    def test_unvoiced_excluded_from_minmax(self):
        out = normalize_f0(F0Track(np.array([100.0, 0.0, 200.0])))
        np.testing.assert_allclose(out, [0.0, UNVOICED, 1.0])

    def test_range_property(self, rng):
        for _ in range(50):
            n = int(rng.integers(4, 60))
            values = rng.uniform(60, 400, size=n)
            values[rng.random(n) < 0.3] = 0.0
            if np.count_nonzero(values) < 2 or np.ptp(values[values > 0]) == 0:
                continue
            out = normalize_f0(F0Track(values))
            voiced = values > 0
            assert np.all((out[voiced] >= 0.0) & (out[voiced] <= 1.0))
            assert np.all(out[~voiced] == UNVOICED)

    def test_affine_invariance_exact_for_pure_scaling(self):
        values = np.array([100.0, 0.0, 155.0, 260.0, 180.0])
        base = normalize_f0(F0Track(values))
        for a in (2.0, 0.5, 4.0):
            scaled = values.copy()
            scaled[scaled > 0] *= a
            np.testing.assert_array_equal(normalize_f0(F0Track(scaled)), base)

    def test_affine_invariance_general(self, rng):
        for _ in range(20):
            values = rng.uniform(80, 300, size=12)
            a, b = rng.uniform(0.5, 3.0), rng.uniform(-20, 50)
            shifted = a * values + b
            assert np.all(shifted > 0)
            np.testing.assert_allclose(
                normalize_f0(F0Track(shifted)),
                normalize_f0(F0Track(values)),
                atol=1e-12,
            )

    def test_constant_track_rejected_with_id(self):
        with pytest.raises(DataError, match="utt42"):
            normalize_f0(F0Track(np.full(5, 120.0)), "utt42")

    def test_all_unvoiced_rejected(self):
        with pytest.raises(DataError, match="unvoiced"):
            normalize_f0(F0Track(np.zeros(5) + 0.0))


class TestFramesToSamples:
    def test_two_frames_four_samples_each(self):
        # frame shift covering 4 samples: 2 frames expand to 8 samples
        out = frames_to_samples(np.array([1.0, 2.0]), 0.25, 16)
        np.testing.assert_array_equal(out, [1, 1, 1, 1, 2, 2, 2, 2])

    def test_single_frame_constant(self):
        out = frames_to_samples(np.array([7.0]), 0.005, 22050)
        assert len(out) == samples_per_frame(0.005, 22050) == 110
        assert np.all(out == 7.0)

    def test_trim_to_total_length(self):
        out = frames_to_samples(np.array([1.0, 2.0]), 0.25, 16, total_length=6)
        np.testing.assert_array_equal(out, [1, 1, 1, 1, 2, 2])

    def test_pad_holds_last_value(self):
        out = frames_to_samples(np.array([1.0, 2.0]), 0.25, 16, total_length=11)
        np.testing.assert_array_equal(out, [1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2])

    def test_matches_waveform_length_property(self, rng):
        for _ in range(30):
            frames = int(rng.integers(1, 40))
            total = int(rng.integers(1, frames * 110 + 200))
            out = frames_to_samples(rng.uniform(size=frames), 0.005, 22050, total)
            assert len(out) == total

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            frames_to_samples(np.array([]), 0.005, 22050)


class TestF0IO:
    def test_roundtrip(self, tmp_path):
        track = F0Track(np.array([0.0, 123.456789, 250.5]))
        path = tmp_path / "a.f0"
        write_f0(path, track)
        back = read_f0(path)
        np.testing.assert_allclose(back.values, track.values, atol=1e-6)

    def test_file_format_is_one_float_per_line(self, tmp_path):
        path = tmp_path / "a.f0"
        write_f0(path, F0Track(np.array([100.0, 0.0])))
        assert path.read_text() == "100.000000\n0.000000\n"

    def test_bad_line_reports_location(self, tmp_path):
        path = tmp_path / "bad.f0"
        path.write_text("100.0\nnot-a-number\n")
        with pytest.raises(DataError, match="bad.f0:2"):
            read_f0(path)

    def test_binary_rejected(self, tmp_path):
        path = tmp_path / "bin.f0"
        path.write_bytes(np.arange(10, dtype=np.float32).tobytes())
        with pytest.raises(DataError):
            read_f0(path)

    def test_negative_value_rejected(self, tmp_path):
        path = tmp_path / "neg.f0"
        path.write_text("100.0\n-3.0\n")
        with pytest.raises(DataError):
            read_f0(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.f0"
        path.write_text("\n\n")
        with pytest.raises(DataError):
            read_f0(path)
