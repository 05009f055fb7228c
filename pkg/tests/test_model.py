"""End-to-end model: mode wiring, loss composition, gradient separation."""
import numpy as np
import pytest

from pitchvq.audio import split_coarse_fine
from pitchvq.errors import ConfigError, ShapeError
from pitchvq.model import ForwardResult, VqVaeModel
from pitchvq.tensor import Tensor


def tiny_model(mode, seed=0, **overrides):
    kwargs = dict(
        latent_dim=8,
        enc_strides=(2, 2, 2, 2, 2, 2),
        enc_wide_channels=16,
        k_wave=32,
        k_f0=4,
        cond_dim=6,
        up_channels=8,
        ar_channels=4,
        wavernn_hidden=12,
        head_hidden=8,
        noise_add=0.0,
        noise_mul=0.0,
    )
    kwargs.update(overrides)
    return VqVaeModel(mode, np.random.default_rng(seed), **kwargs)


def tiny_batch(rng, batch=2, t=128, cond_dim=6):
    samples = rng.integers(-3000, 3000, size=(batch, t))
    coarse, fine = split_coarse_fine(samples)
    scaled = samples / 32768.0
    f0_stream = rng.uniform(0, 1, size=(batch, t))
    cond = rng.normal(size=(batch, cond_dim))
    return scaled, f0_stream, cond, coarse.astype(np.int64), fine.astype(np.int64)


def run_forward(model, rng, beta=0.005, gamma=10.0, **kw):
    scaled, f0s, cond, coarse, fine = tiny_batch(rng)
    f0s = f0s if model.mode == "extended" else None
    return model.forward_train(scaled, f0s, cond, coarse, fine, beta, gamma,
                               np.random.default_rng(0), **kw)


class TestConstruction:
    def test_bad_mode_rejected(self):
        with pytest.raises(ConfigError, match="mode"):
            tiny_model("fancy")

    def test_factor_mismatch_rejected(self):
        with pytest.raises(ConfigError, match="factor"):
            tiny_model("baseline", enc_strides=(2, 2, 2))

    def test_baseline_has_no_f0_branch(self):
        model = tiny_model("baseline")
        assert model.f0_encoder is None and model.f0_book is None
        assert not any(k.startswith("f0_") for k in model.params())

    def test_extended_has_both_codebooks(self):
        model = tiny_model("extended")
        assert model.wave_book.num_codes == 32
        assert model.f0_book.num_codes == 4
        assert model.wave_book.dim == model.f0_book.dim == 8


class TestForward:
    def test_extended_losses_all_finite(self, rng):
        result = run_forward(tiny_model("extended"), rng)
        for name in ("total", "nll", "vq_wave", "commit_wave", "vq_f0", "commit_f0"):
            assert np.isfinite(getattr(result, name).item()), name

    def test_baseline_f0_terms_identically_zero(self, rng):
        result = run_forward(tiny_model("baseline"), rng)
        assert result.vq_f0.item() == 0.0
        assert result.commit_f0.item() == 0.0
        assert result.f0_indices is None

    def test_baseline_total_is_plain_vq_objective(self, rng):
        beta = 0.007
        result = run_forward(tiny_model("baseline"), rng, beta=beta, gamma=123.0)
        expected = (result.nll.item() + result.vq_wave.item()
                    + beta * result.commit_wave.item())
        assert result.total.item() == pytest.approx(expected, abs=1e-12)

    def test_total_recomposes_from_components(self, rng):
        beta, gamma = 0.0055, 5.05
        result = run_forward(tiny_model("extended"), rng, beta=beta, gamma=gamma)
        expected = (
            result.nll.item()
            + result.vq_wave.item() + beta * result.commit_wave.item()
            + gamma * (result.vq_f0.item() + beta * result.commit_f0.item())
        )
        assert result.total.item() == pytest.approx(expected, abs=1e-12)

    def test_deterministic_given_seeds(self, rng):
        scaled, f0s, cond, coarse, fine = tiny_batch(rng)
        totals = []
        for _ in range(2):
            model = tiny_model("extended", seed=7)
            out = model.forward_train(scaled, f0s, cond, coarse, fine, 0.005,
                                      10.0, np.random.default_rng(3))
            totals.append(out.total.item())
        assert totals[0] == totals[1]

    def test_extended_requires_f0_stream(self, rng):
        model = tiny_model("extended")
        scaled, _, cond, coarse, fine = tiny_batch(rng)
        with pytest.raises(ShapeError, match="F0"):
            model.forward_train(scaled, None, cond, coarse, fine, 0.005, 10.0,
                                np.random.default_rng(0))

    def test_usage_counts_only_in_training_mode(self, rng):
        model = tiny_model("extended")
        run_forward(model, rng, training=False)
        assert model.wave_book.usage_counts.sum() == 0
        run_forward(model, rng, training=True)
        assert model.wave_book.usage_counts.sum() == 4  # B*N = 2*2
        assert model.f0_book.usage_counts.sum() == 4


class TestGradientSeparation:
    def _grads(self, model, loss_tensor):
        for p in model.params().values():
            p.grad = None
        loss_tensor.backward()
        return {k: p.grad_array() for k, p in model.params().items()}

    def test_vq_terms_do_not_touch_decoder(self, rng):
        model = tiny_model("extended")
        result = run_forward(model, rng)
        vq_only = (result.vq_wave + result.commit_wave + result.vq_f0
                   + result.commit_f0)
        grads = self._grads(model, vq_only)
        for name, g in grads.items():
            if name.startswith("decoder."):
                assert not np.any(g), name

    def test_nll_does_not_touch_codebooks(self, rng):
        model = tiny_model("extended")
        result = run_forward(model, rng)
        grads = self._grads(model, result.nll)
        assert not np.any(grads["wave_book.vectors"])
        assert not np.any(grads["f0_book.vectors"])

    def test_nll_reaches_encoders_through_bottleneck(self, rng):
        model = tiny_model("extended")
        result = run_forward(model, rng)
        grads = self._grads(model, result.nll)
        wave_enc = [g for k, g in grads.items() if k.startswith("wave_encoder.")]
        f0_enc = [g for k, g in grads.items() if k.startswith("f0_encoder.")]
        assert any(np.any(g) for g in wave_enc)
        assert any(np.any(g) for g in f0_enc)

    def test_total_touches_codebooks(self, rng):
        model = tiny_model("extended")
        result = run_forward(model, rng)
        grads = self._grads(model, result.total)
        assert np.any(grads["wave_book.vectors"])
        assert np.any(grads["f0_book.vectors"])


class TestStateRoundtrip:
    def test_bit_exact(self, rng):
        model = tiny_model("extended", seed=1)
        saved = model.state_arrays()
        other = tiny_model("extended", seed=2)
        other.load_state_arrays(saved)
        for name, p in other.params().items():
            np.testing.assert_array_equal(p.data, saved[name])
        scaled, f0s, cond, coarse, fine = tiny_batch(rng)
        a = model.forward_train(scaled, f0s, cond, coarse, fine, 0.005, 10.0,
                                np.random.default_rng(0)).total.item()
        b = other.forward_train(scaled, f0s, cond, coarse, fine, 0.005, 10.0,
                                np.random.default_rng(0)).total.item()
        assert a == b

    def test_mismatched_architecture_rejected(self):
        model = tiny_model("extended")
        saved = model.state_arrays()
        with pytest.raises(ConfigError):
            tiny_model("baseline").load_state_arrays(saved)


class TestInference:
    def test_reconstruct_shapes_and_types(self, rng):
        model = tiny_model("extended")
        samples = rng.integers(-2000, 2000, size=150).astype(np.int16)
        f0s = rng.uniform(0, 1, size=150)
        out = model.reconstruct(samples, f0s, rng.normal(size=6),
                                np.random.default_rng(0))
        assert out.samples.dtype == np.int16
        assert out.samples.shape == (128,)  # trimmed to a multiple of 64

    def test_reconstruct_too_short_rejected(self, rng):
        model = tiny_model("baseline")
        with pytest.raises(ShapeError):
            model.reconstruct(np.zeros(40, dtype=np.int16), None,
                              rng.normal(size=6), np.random.default_rng(0))

    def test_encode_codes_lengths(self, rng):
        model = tiny_model("extended")
        samples = rng.integers(-2000, 2000, size=256).astype(np.int16)
        f0s = rng.uniform(0, 1, size=256)
        idx_w, idx_f = model.encode_codes(samples, f0s, np.random.default_rng(0))
        assert idx_w.shape == idx_f.shape == (4,)
        assert idx_w.max() < 32 and idx_f.max() < 4

    def test_baseline_codes_have_no_f0(self, rng):
        model = tiny_model("baseline")
        samples = rng.integers(-2000, 2000, size=128).astype(np.int16)
        idx_w, idx_f = model.encode_codes(samples, None, np.random.default_rng(0))
        assert idx_f is None
        assert idx_w.shape == (2,)
