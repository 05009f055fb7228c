"""Full autoencoder: encoders, VQ bottlenecks, and the AR decoder.

Two operating modes share one code path.  In ``extended`` mode the raw
waveform and the per-sample normalized F0 stream are encoded separately,
each quantized against its own codebook, and both centroid streams reach
the decoder.  In ``baseline`` mode the pitch branch does not exist: only
the waveform codes condition the decoder and the pitch loss terms are
identically zero, which reduces the objective to the plain VQ formulation.

The total training loss is

    nll + vq_wave + beta * commit_wave + gamma * (vq_f0 + beta * commit_f0)

with the raw terms kept separate so logs show each component and the
schedule weights can be applied outside.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import CONDITION_DIM
from .decoder import Decoder, GenerationResult
from .encoder import Encoder, F0Refiner, inject_noise, scale_waveform
from .errors import ConfigError, ShapeError
from .quantize import Codebook, gather, quantize, vq_losses
from .tensor import Tensor, concat, no_grad, straight_through

MODES = ("baseline", "extended")


@dataclass
class ForwardResult:
    total: Tensor
    nll: Tensor
    vq_wave: Tensor
    commit_wave: Tensor
    vq_f0: Tensor
    commit_f0: Tensor
    wave_indices: np.ndarray
    f0_indices: np.ndarray | None


class VqVaeModel:
    def __init__(
        self,
        mode: str,
        rng: np.random.Generator,
        *,
        latent_dim: int = 128,
        enc_strides: tuple[int, ...] = (2, 2, 2, 2, 2, 2, 1, 1, 1, 1),
        enc_wide_channels: int = 256,
        k_wave: int = 512,
        k_f0: int = 10,
        cond_dim: int = CONDITION_DIM,
        up_factors: tuple[int, ...] = (4, 4, 4),
        up_channels: int = 128,
        ar_channels: int = 64,
        wavernn_hidden: int = 256,
        head_hidden: int = 128,
        f0_refine_kernel: int = 9,
        noise_add: float = 0.01,
        noise_mul: float = 0.02,
    ):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.latent_dim = latent_dim
        self.cond_dim = cond_dim
        self.noise_add = noise_add
        self.noise_mul = noise_mul

        self.wave_encoder = Encoder(1, rng, enc_strides, latent_dim, enc_wide_channels)
        self.wave_book = Codebook(k_wave, latent_dim, rng)
        if mode == "extended":
            self.f0_refiner = F0Refiner(rng, f0_refine_kernel)
            self.f0_encoder = Encoder(1, rng, enc_strides, latent_dim,
                                      enc_wide_channels)
            self.f0_book = Codebook(k_f0, latent_dim, rng)
            branches = 2
        else:
            self.f0_refiner = None
            self.f0_encoder = None
            self.f0_book = None
            branches = 1

        self.factor = self.wave_encoder.factor
        if self.factor != int(np.prod(up_factors)):
            raise ConfigError(
                f"encoder factor {self.factor} must equal the decoder's "
                f"upsampling product {int(np.prod(up_factors))}"
            )
        self.decoder = Decoder(
            branches * latent_dim + cond_dim,
            cond_dim,
            rng,
            up_factors=up_factors,
            up_channels=up_channels,
            ar_channels=ar_channels,
            wavernn_hidden=wavernn_hidden,
            head_hidden=head_hidden,
        )

    # -- parameters -----------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out = {}
        for name, mod in self._modules():
            for key, value in mod.params().items():
                out[f"{name}.{key}"] = value
        return out

    def _modules(self):
        mods = [("wave_encoder", self.wave_encoder), ("wave_book", self.wave_book)]
        if self.mode == "extended":
            mods += [
                ("f0_refiner", self.f0_refiner),
                ("f0_encoder", self.f0_encoder),
                ("f0_book", self.f0_book),
            ]
        mods.append(("decoder", self.decoder))
        return mods

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ConfigError(
                f"parameter set mismatch: missing {sorted(missing)[:3]}, "
                f"unexpected {sorted(extra)[:3]}"
            )
        for name, p in params.items():
            if p.data.shape != arrays[name].shape:
                raise ConfigError(
                    f"shape mismatch for {name}: {p.data.shape} vs "
                    f"{arrays[name].shape}"
                )
            p.data = np.array(arrays[name], dtype=np.float64)

    # -- encoding -------------------------------------------------------

    def encode_latents(self, scaled_wave: np.ndarray, f0_stream: np.ndarray | None,
                       rng: np.random.Generator, training: bool):
        """Continuous latents for both branches; (B, N, D) each."""
        scaled_wave = np.atleast_2d(scaled_wave)
        x = inject_noise(scaled_wave, self.noise_add, self.noise_mul, rng, training)
        z_wave = self.wave_encoder(Tensor(x[:, None, :]))
        z_f0 = None
        if self.mode == "extended":
            if f0_stream is None:
                raise ShapeError("extended mode needs the per-sample F0 stream")
            f0_stream = np.atleast_2d(f0_stream)
            if f0_stream.shape != scaled_wave.shape:
                raise ShapeError(
                    f"F0 stream {f0_stream.shape} does not match waveform "
                    f"{scaled_wave.shape}"
                )
            f = inject_noise(f0_stream, self.noise_add, self.noise_mul, rng, training)
            refined = self.f0_refiner(Tensor(f[:, None, :]))
            z_f0 = self.f0_encoder(refined)
        return z_wave, z_f0

    def _quantize_branch(self, z: Tensor, book: Codebook, update_usage: bool):
        b, n, d = z.shape
        flat = z.reshape(b * n, d)
        seq = quantize(flat, book, update_usage=update_usage)
        e = gather(book, seq.indices)
        bottleneck = straight_through(flat, e)
        stream = bottleneck.reshape(b, n, d).transpose(0, 2, 1)  # (B, D, N)
        return flat, e, seq.indices.reshape(b, n), stream

    def _latent_stream(self, streams, cond_np: np.ndarray, n: int) -> Tensor:
        tiled = np.repeat(cond_np[:, :, None], n, axis=2)
        return concat(streams + [Tensor(tiled)], axis=1)

    # -- training forward ----------------------------------------------

    def forward_train(self, scaled_wave: np.ndarray, f0_stream: np.ndarray | None,
                      cond: np.ndarray, coarse: np.ndarray, fine: np.ndarray,
                      beta: float, gamma: float, rng: np.random.Generator,
                      training: bool = True) -> ForwardResult:
        cond = np.atleast_2d(cond)
        z_wave, z_f0 = self.encode_latents(scaled_wave, f0_stream, rng, training)
        n = z_wave.shape[1]

        flat_w, e_w, idx_w, stream_w = self._quantize_branch(
            z_wave, self.wave_book, training
        )
        vq_wave, commit_wave = vq_losses(flat_w, e_w, 1.0)

        streams = [stream_w]
        if self.mode == "extended":
            flat_f, e_f, idx_f, stream_f = self._quantize_branch(
                z_f0, self.f0_book, training
            )
            vq_f0, commit_f0 = vq_losses(flat_f, e_f, 1.0)
            streams.append(stream_f)
        else:
            vq_f0 = Tensor(np.array(0.0))
            commit_f0 = Tensor(np.array(0.0))
            idx_f = None

        cond_t = Tensor(cond)
        latent_stream = self._latent_stream(streams, cond, n)
        logits_c, logits_f = self.decoder.teacher_forced(
            latent_stream, cond_t, coarse, fine
        )
        nll = self.decoder.nll_loss(logits_c, logits_f, coarse, fine)

        total = nll + vq_wave + beta * commit_wave
        if self.mode == "extended":
            total = total + gamma * (vq_f0 + beta * commit_f0)
        return ForwardResult(total, nll, vq_wave, commit_wave, vq_f0, commit_f0,
                             idx_w, idx_f)

    # -- inference ------------------------------------------------------

    def encode_codes(self, samples: np.ndarray, f0_stream: np.ndarray | None,
                     rng: np.random.Generator):
        """Code indices for one utterance (no usage updates, no noise)."""
        with no_grad():
            z_wave, z_f0 = self.encode_latents(
                scale_waveform(samples), f0_stream, rng, training=False
            )
            idx_w = quantize(
                z_wave.data.reshape(-1, self.latent_dim), self.wave_book,
                update_usage=False,
            ).indices
            idx_f = None
            if self.mode == "extended":
                idx_f = quantize(
                    z_f0.data.reshape(-1, self.latent_dim), self.f0_book,
                    update_usage=False,
                ).indices
        return idx_w, idx_f

    def reconstruct(self, samples: np.ndarray, f0_stream: np.ndarray | None,
                    cond: np.ndarray, rng: np.random.Generator,
                    temperature: float = 1.0, greedy: bool = False,
                    ) -> GenerationResult:
        """Encode one utterance and regenerate it sample by sample."""
        samples = np.asarray(samples)
        if samples.ndim != 1:
            raise ShapeError("reconstruct works on a single utterance")
        usable = (len(samples) // self.factor) * self.factor
        if usable == 0:
            raise ShapeError(
                f"utterance shorter than one latent frame ({self.factor} samples)"
            )
        trimmed = samples[:usable]
        stream = None if f0_stream is None else np.asarray(f0_stream)[:usable]
        with no_grad():
            z_wave, z_f0 = self.encode_latents(
                scale_waveform(trimmed), stream, rng, training=False
            )
            parts = []
            for z, book in ((z_wave, self.wave_book), (z_f0, self.f0_book)):
                if z is None:
                    continue
                seq = quantize(z.data[0], book, update_usage=False)
                parts.append(seq.vectors.T)  # (D, N)
            n = parts[0].shape[1]
            cond = np.asarray(cond, dtype=np.float64).reshape(-1)
            latents = np.concatenate(
                parts + [np.repeat(cond[:, None], n, axis=1)], axis=0
            )
            return self.decoder.generate(
                latents, cond, rng, temperature=temperature, greedy=greedy
            )
