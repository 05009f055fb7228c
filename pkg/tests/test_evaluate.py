import warnings

import numpy as np
import pytest

from pitchvq.audio import Waveform, write_wav
from pitchvq.errors import DataError
from pitchvq.evaluate import (
    EvalReport,
    UtteranceEval,
    estimate_f0,
    evaluate_corpus,
    log_f0_rmse,
)
from pitchvq.f0 import F0Track, write_f0
from pitchvq.training import TrainState, save_checkpoint

RATE = 22050


def tone(freq, seconds, amp=8000.0, rate=RATE):
    t = np.arange(int(seconds * rate)) / rate
    return Waveform(np.rint(amp * np.sin(2 * np.pi * freq * t)).astype(np.int16), rate)


class TestEstimateF0:
    def test_pure_sine_within_two_hz_on_interior(self):
        est = estimate_f0(tone(220.0, 1.0))
        assert len(est) == -(-RATE // 110)
        interior = est.values[10:-10]
        assert np.all(interior > 0)
        assert np.max(np.abs(interior - 220.0)) <= 2.0
        assert np.all(est.confidence[10:-10] > 0.5)

    def test_low_and_high_band_edges_tracked(self):
        for freq in (80.0, 450.0):
            est = estimate_f0(tone(freq, 1.0))
            interior = est.values[10:-10]
            voiced = interior[interior > 0]
            assert voiced.size > 0.9 * interior.size
            assert np.max(np.abs(voiced - freq)) <= 3.0

    def test_white_noise_mostly_unvoiced(self):
        rng = np.random.default_rng(42)
        noise = Waveform(
            np.clip(rng.normal(0, 6000, RATE), -32768, 32767).astype(np.int16), RATE
        )
        est = estimate_f0(noise)
        assert np.mean(est.values == 0) >= 0.9

    def test_silence_all_unvoiced(self):
        est = estimate_f0(Waveform(np.zeros(RATE, np.int16), RATE))
        assert np.all(est.values == 0)
        assert np.all(est.confidence == 0)

    def test_amplitude_invariance(self):
        loud = tone(220.0, 0.8)
        soft = Waveform((loud.samples // 2).astype(np.int16), RATE)
        a, b = estimate_f0(loud), estimate_f0(soft)
        both = a.voiced_mask & b.voiced_mask
        assert both.sum() >= 0.8 * len(a)
        assert np.max(np.abs(a.values[both] - b.values[both])) <= 1.0

    def test_estimates_stay_inside_search_band(self):
        rng = np.random.default_rng(5)
        mix = tone(300.0, 0.6).samples + rng.normal(0, 2000, int(0.6 * RATE))
        est = estimate_f0(Waveform(np.clip(mix, -32768, 32767).astype(np.int16), RATE))
        voiced = est.values[est.voiced_mask]
        assert np.all((voiced >= 50.0) & (voiced <= 600.0))

    def test_too_short_rejected(self):
        with pytest.raises(DataError, match="window"):
            estimate_f0(Waveform(np.zeros(300, np.int16), RATE))

    def test_deterministic(self):
        w = tone(172.5, 0.7)
        first, second = estimate_f0(w), estimate_f0(w)
        np.testing.assert_array_equal(first.values, second.values)


class TestLogF0Rmse:
    def test_identical_tracks_zero(self):
        track = np.array([0.0, 120.0, 130.0, 0.0, 140.0])
        assert log_f0_rmse(track, track.copy()) == 0.0

    def test_constant_factor_is_abs_log_k(self):
        ref = np.array([100.0, 150.0, 220.0, 330.0])
        assert log_f0_rmse(ref, ref * np.e) == pytest.approx(1.0, abs=1e-12)
        assert log_f0_rmse(ref, ref * 2.0) == pytest.approx(
            0.6931471805599453, abs=1e-12
        )
        assert log_f0_rmse(ref, ref * 0.5) == pytest.approx(
            0.6931471805599453, abs=1e-12
        )

    def test_hand_computed_pair(self):
        # sqrt((ln(100/110)^2 + ln(200/190)^2) / 2)
        got = log_f0_rmse(np.array([100.0, 200.0]), np.array([110.0, 190.0]))
        assert got == pytest.approx(0.0765344119447607, abs=1e-12)

    def test_symmetry_is_exact(self):
        rng = np.random.default_rng(8)
        a = rng.uniform(80, 400, 50)
        b = rng.uniform(80, 400, 50)
        a[rng.random(50) < 0.2] = 0.0
        b[rng.random(50) < 0.2] = 0.0
        assert log_f0_rmse(a, b) == log_f0_rmse(b, a)

    def test_only_mutually_voiced_frames_count(self):
        ref = np.array([100.0, 0.0, 200.0, 300.0])
        hyp = np.array([100.0, 150.0, 0.0, 300.0])
        # frames 0 and 3 agree exactly; unvoiced mismatches are ignored
        assert log_f0_rmse(ref, hyp) == 0.0

    def test_no_mutual_voicing_is_an_error(self):
        with pytest.raises(DataError, match="voiced"):
            log_f0_rmse(np.array([100.0, 0.0]), np.array([0.0, 100.0]))

    def test_length_mismatch_truncates_with_warning(self):
        ref = np.full(10, 100.0)
        hyp = np.full(14, 100.0)
        with pytest.warns(UserWarning, match="truncating"):
            assert log_f0_rmse(ref, hyp) == 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert log_f0_rmse(np.full(10, 100.0), np.full(12, 100.0)) == 0.0

    def test_accepts_estimates_and_arrays(self):
        est = estimate_f0(tone(220.0, 0.5))
        assert log_f0_rmse(est, est.values) == 0.0


class TestEvalReport:
    def _report(self):
        rows = (
            UtteranceEval("u1", "spk_a", 0.2, 0.9, 100),
            UtteranceEval("u2", "spk_a", 0.4, 0.8, 100),
            UtteranceEval("u3", "spk_b", 0.3, 0.7, 90),
        )
        return EvalReport("extended", rows, (("u4", "no frames voiced in both"),))

    def test_per_speaker_and_mean(self):
        report = self._report()
        assert report.per_speaker == {
            "spk_a": pytest.approx(0.3), "spk_b": pytest.approx(0.3)
        }
        assert report.mean_rmse == pytest.approx(0.3)

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "report.csv"
        self._report().write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "speaker,variant,log_f0_rmse,p563_mos"
        assert lines[1].startswith("spk_a,extended,0.300000,")
        assert lines[-1].startswith("average,extended,0.300000,")

    def test_summary_mentions_failures(self):
        text = self._report().summary()
        assert "skipped u4" in text
        assert "average: 0.3000" in text

    def test_empty_report_refuses_mean(self):
        with pytest.raises(DataError):
            EvalReport("baseline", (), ()).mean_rmse


def build_disk_corpus(root, rng, n_utts=2, seconds=0.3):
    wav_dir = root / "wavs"
    f0_dir = root / "f0"
    wav_dir.mkdir(parents=True)
    f0_dir.mkdir()
    rows = []
    speakers = ["spk_a", "spk_b"]
    for i in range(n_utts):
        uid = f"utt{i:02d}"
        freq = 160.0 + 30.0 * i
        wave = tone(freq, seconds, amp=9000.0)
        n_frames = -(-len(wave.samples) // 110)
        values = np.linspace(freq - 10.0, freq + 10.0, n_frames)
        values[:2] = 0.0
        write_wav(wav_dir / f"{uid}.wav", wave)
        write_f0(f0_dir / f"{uid}.f0", F0Track(values, 0.005))
        rows.append(
            f"{uid},wavs/{uid}.wav,f0/{uid}.f0,F,neutral,{speakers[i % 2]}"
        )
    manifest = root / "manifest.csv"
    manifest.write_text(
        "id,wav_path,f0_path,gender,emotion,speaker_id\n" + "\n".join(rows) + "\n"
    )
    table = root / "speakers.txt"
    lines = [
        " ".join([spk] + [f"{v:.6f}" for v in rng.uniform(-1, 1, 50)])
        for spk in speakers
    ]
    table.write_text("\n".join(lines) + "\n")
    return manifest, table


class TestEvaluateCorpus:
    @pytest.fixture()
    def setup(self, tmp_path):
        from test_training import micro_cfg

        rng = np.random.default_rng(11)
        manifest, table = build_disk_corpus(tmp_path, rng)
        cfg = micro_cfg()
        state = TrainState(cfg)
        ckpt = tmp_path / "ck.npz"
        save_checkpoint(ckpt, state)
        return ckpt, manifest, table

    def test_untrained_model_failures_are_recorded_not_fatal(self, setup):
        ckpt, manifest, table = setup
        report = evaluate_corpus(ckpt, manifest, table)
        assert len(report.utterances) + len(report.failures) == 2
        for uid, message in report.failures:
            assert uid.startswith("utt")
            assert message

    def test_parallel_matches_serial(self, setup):
        ckpt, manifest, table = setup
        serial = evaluate_corpus(ckpt, manifest, table, workers=1)
        parallel = evaluate_corpus(ckpt, manifest, table, workers=2)
        assert serial == parallel
