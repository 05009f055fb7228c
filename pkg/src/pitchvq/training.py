"""Training loop: loss schedules, mini-batch steps, checkpoints, metrics.

Each step draws a batch of utterances (with replacement), takes one random
crop per utterance snapped to the downsampling factor, runs the forward
pass at the scheduled (beta, gamma), backpropagates the total, clips the
global gradient norm, and applies Adam.  Every random draw flows from the
single run RNG, so a fixed seed fixes the entire trajectory, and the RNG
state is checkpointed: resuming reproduces the uninterrupted run bit for
bit.
"""
from __future__ import annotations

import csv
import json
import os
import zipfile
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .audio import normalize_amplitude, split_coarse_fine
from .config import RunConfig, parse_config
from .corpus import Utterance
from .encoder import scale_waveform
from .errors import ConfigError, DataError, NumericError
from .f0 import frames_to_samples, normalize_f0
from .model import VqVaeModel
from .optim import Adam, clip_grad_norm
from .quantize import codebook_health
from .tensor import no_grad

METRIC_COLUMNS = (
    "step", "nll", "vq_wave", "commit_wave", "vq_f0", "commit_f0",
    "beta", "gamma", "total", "wave_perplexity", "f0_perplexity",
)


def schedule_eval(step: int, cfg: RunConfig) -> tuple[float, float]:
    """Piecewise-linear (beta, gamma) weights at a training step."""
    if step < 0:
        raise ConfigError(f"schedule step must be >= 0, got {step}")
    if step >= cfg.beta_ramp_steps:
        beta = cfg.beta_end
    else:
        beta = cfg.beta_start + (cfg.beta_end - cfg.beta_start) * (
            step / cfg.beta_ramp_steps
        )
    if step <= cfg.gamma_hold_steps:
        gamma = cfg.gamma_high
    elif step >= cfg.gamma_end_steps:
        gamma = cfg.gamma_low
    else:
        span = cfg.gamma_end_steps - cfg.gamma_hold_steps
        gamma = cfg.gamma_high + (cfg.gamma_low - cfg.gamma_high) * (
            (step - cfg.gamma_hold_steps) / span
        )
    return beta, gamma


@dataclass(frozen=True)
class PreparedUtterance:
    """Amplitude-normalized utterance with precomputed training targets."""

    id: str
    samples: np.ndarray  # int16, level-normalized
    scaled: np.ndarray  # float in [-1, 1)
    coarse: np.ndarray  # uint8
    fine: np.ndarray  # uint8
    f0_stream: np.ndarray | None  # per-sample normalized F0 (extended mode)
    cond: np.ndarray  # (cond_dim,)

    def __len__(self):
        return len(self.samples)


def prepare_utterance(utt: Utterance, cfg: RunConfig) -> PreparedUtterance:
    wav, _ = normalize_amplitude(utt.waveform, cfg.target_rms)
    coarse, fine = split_coarse_fine(wav.samples)
    f0_stream = None
    if cfg.mode == "extended":
        normalized = normalize_f0(utt.f0, utt.id)
        f0_stream = frames_to_samples(
            normalized, utt.f0.frame_shift, wav.sample_rate, len(wav.samples)
        )
    return PreparedUtterance(
        utt.id, wav.samples, scale_waveform(wav.samples), coarse, fine,
        f0_stream, utt.condition.assembled,
    )


def prepare_utterances(utterances: list[Utterance], cfg: RunConfig
                       ) -> list[PreparedUtterance]:
    """Prepare every utterance, collecting all failures before raising."""
    out, failures = [], []
    for utt in utterances:
        try:
            out.append(prepare_utterance(utt, cfg))
        except DataError as exc:
            failures.append(f"{utt.id}: {exc}")
    if failures:
        raise DataError(
            f"{len(failures)} utterances unusable for training:\n  "
            + "\n  ".join(failures)
        )
    return out


def sample_crop(utt: PreparedUtterance, crop_len: int, factor: int,
                rng: np.random.Generator):
    """Random factor-aligned crop; returns (scaled, f0_stream, coarse, fine)."""
    if len(utt) < crop_len:
        raise DataError(
            f"utterance {utt.id} has {len(utt)} samples, shorter than the "
            f"crop length {crop_len}"
        )
    slots = (len(utt) - crop_len) // factor + 1
    start = int(rng.integers(0, slots)) * factor
    stop = start + crop_len
    stream = None if utt.f0_stream is None else utt.f0_stream[start:stop]
    return utt.scaled[start:stop], stream, utt.coarse[start:stop], utt.fine[start:stop]


@dataclass(frozen=True)
class LossBreakdown:
    step: int
    nll: float
    vq_wave: float
    commit_wave: float
    vq_f0: float
    commit_f0: float
    beta: float
    gamma: float
    total: float
    wave_perplexity: float
    f0_perplexity: float

    def as_row(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]


class TrainState:
    def __init__(self, cfg: RunConfig, model: VqVaeModel | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.model = model if model is not None else cfg.build_model(self.rng)
        self.optimizer = Adam(
            self.model.params(), lr=cfg.learning_rate, beta1=cfg.adam_beta1,
            beta2=cfg.adam_beta2, eps=cfg.adam_eps,
        )
        self.step = 0
        # a restored model keeps its trained codebooks; only a freshly
        # built one gets the first-batch bootstrap in train_step
        self.fresh_codebooks = model is None


def seed_codebooks(state: TrainState, scaled: np.ndarray,
                   f0_stream: np.ndarray | None) -> None:
    """Re-initialize each codebook from the batch's encoder outputs.

    The construction-time init is a tiny uniform box, far from where the
    encoders actually put their latents; left there, one code captures
    every assignment and the rest never receive gradient again.  Drawing
    the initial codes from real latent rows starts every code inside the
    cloud with its own partition.
    """
    model = state.model
    with no_grad():
        z_wave, z_f0 = model.encode_latents(
            scaled, f0_stream, state.rng, training=False
        )
    for z, book in ((z_wave, model.wave_book), (z_f0, model.f0_book)):
        if z is None or book is None:
            continue
        rows = z.data.reshape(-1, book.dim)
        k = book.num_codes
        if len(rows) >= k:
            picked = rows[state.rng.choice(len(rows), size=k, replace=False)]
        else:
            picked = rows[state.rng.choice(len(rows), size=k, replace=True)]
            # duplicated rows would tie on every lookup and starve all but
            # the first; a small jitter keeps each code distinct
            scale = max(float(rows.std()), 1e-6)
            picked = picked + state.rng.normal(0.0, 1e-3 * scale, picked.shape)
        book.vectors.data = picked.copy()


def train_step(state: TrainState, batch: list[PreparedUtterance]) -> LossBreakdown:
    if not batch:
        raise DataError("empty training batch")
    cfg = state.cfg
    beta, gamma = schedule_eval(state.step, cfg)

    scaled, streams, coarse, fine = [], [], [], []
    for utt in batch:
        s, f, c, fn = sample_crop(utt, cfg.crop_len, state.model.factor, state.rng)
        scaled.append(s)
        streams.append(f)
        coarse.append(c)
        fine.append(fn)
    scaled = np.stack(scaled)
    coarse = np.stack(coarse).astype(np.int64)
    fine = np.stack(fine).astype(np.int64)
    f0_stream = None if streams[0] is None else np.stack(streams)
    cond = np.stack([utt.cond for utt in batch])

    model = state.model
    if state.fresh_codebooks:
        seed_codebooks(state, scaled, f0_stream)
        state.fresh_codebooks = False
    model.wave_book.reset_usage()
    if model.f0_book is not None:
        model.f0_book.reset_usage()

    ids = ",".join(utt.id for utt in batch)
    try:
        result = model.forward_train(
            scaled, f0_stream, cond, coarse, fine, beta, gamma, state.rng
        )
        if not np.isfinite(result.total.item()):
            raise NumericError("non-finite loss")
        state.optimizer.zero_grad()
        result.total.backward()
        clip_grad_norm(model.params(), cfg.grad_clip)
        state.optimizer.step()
    except NumericError as exc:
        raise NumericError(f"{exc} (step {state.step}, batch [{ids}])") from exc

    wave_perp = codebook_health(model.wave_book).perplexity
    f0_perp = (codebook_health(model.f0_book).perplexity
               if model.f0_book is not None else 0.0)
    breakdown = LossBreakdown(
        state.step, result.nll.item(), result.vq_wave.item(),
        result.commit_wave.item(), result.vq_f0.item(), result.commit_f0.item(),
        beta, gamma, result.total.item(), wave_perp, f0_perp,
    )
    state.step += 1
    return breakdown


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(path: str | Path, state: TrainState) -> None:
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for name, value in state.model.state_arrays().items():
        arrays[f"param.{name}"] = value
    arrays.update(state.optimizer.state_arrays())
    arrays["meta.step"] = np.array(state.step, dtype=np.int64)
    arrays["meta.adam_t"] = np.array(state.optimizer.t, dtype=np.int64)
    arrays["meta.rng_state"] = np.array(
        json.dumps(state.rng.bit_generator.state)
    )
    arrays["meta.config_text"] = np.array(state.cfg.to_text())
    arrays["meta.arch_hash"] = np.array(state.cfg.arch_hash())
    arrays["meta.full_hash"] = np.array(state.cfg.full_hash())
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as handle:
        np.savez(handle, **arrays)
    os.replace(tmp, path)


def read_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as npz:
            return {k: npz[k] for k in npz.files}
    except OSError as exc:
        raise DataError(f"{path}: cannot read checkpoint ({exc})") from exc
    except (ValueError, zipfile.BadZipFile) as exc:
        raise DataError(f"{path}: malformed checkpoint ({exc})") from exc


def checkpoint_config(arrays: dict[str, np.ndarray]) -> RunConfig:
    return parse_config(str(arrays["meta.config_text"][()]))


def load_checkpoint(path: str | Path, cfg: RunConfig | None = None,
                    require_full_match: bool = False) -> TrainState:
    """Rebuild a TrainState from disk.

    With ``cfg`` given, its architecture hash must match the checkpoint's
    (and the full hash too when resuming a run); without one, the embedded
    config is used as-is.
    """
    arrays = read_checkpoint(path)
    stored = checkpoint_config(arrays)
    if cfg is not None:
        if cfg.arch_hash() != stored.arch_hash():
            raise ConfigError(
                f"checkpoint {path} was written for architecture "
                f"{stored.arch_hash()}, current config is {cfg.arch_hash()}"
            )
        if require_full_match and cfg.full_hash() != stored.full_hash():
            raise ConfigError(
                f"checkpoint {path} comes from a different run recipe "
                f"(full hash {stored.full_hash()} vs {cfg.full_hash()})"
            )
        stored = cfg

    state = TrainState(stored)
    params = {
        k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")
    }
    state.model.load_state_arrays(params)
    adam = {k: v for k, v in arrays.items() if k.startswith("adam_")}
    state.optimizer.load_state_arrays(adam, t=int(arrays["meta.adam_t"][()]))
    state.step = int(arrays["meta.step"][()])
    state.rng.bit_generator.state = json.loads(str(arrays["meta.rng_state"][()]))
    state.fresh_codebooks = False
    return state


# -- the loop ------------------------------------------------------------

def train(cfg: RunConfig, utterances: list[Utterance], out_dir: str | Path,
          resume: bool = False, stop_after: int | None = None,
          log=None) -> TrainState:
    """Run (or resume) training; returns the final state.

    Writes ``config.txt`` (the effective config), ``metrics.csv`` (one row
    per step), and ``checkpoint.npz`` under ``out_dir``.  ``stop_after``
    pauses the run once that absolute step count is reached (the run is
    still governed by ``cfg.total_steps``; pass ``resume=True`` later to
    pick it back up).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "checkpoint.npz"
    metrics_path = out_dir / "metrics.csv"

    prepared = prepare_utterances(utterances, cfg)
    too_short = [u.id for u in prepared if len(u) < cfg.crop_len]
    if too_short:
        raise DataError(
            f"utterances shorter than crop_len {cfg.crop_len}: "
            + ", ".join(too_short)
        )

    if resume:
        if not ckpt_path.exists():
            raise ConfigError(f"cannot resume: {ckpt_path} does not exist")
        state = load_checkpoint(ckpt_path, cfg, require_full_match=True)
        mode = "a"
    else:
        state = TrainState(cfg)
        mode = "w"

    (out_dir / "config.txt").write_text(cfg.to_text())
    with open(metrics_path, mode, newline="") as handle:
        writer = csv.writer(handle)
        if mode == "w":
            writer.writerow(METRIC_COLUMNS)
        n = len(prepared)
        last_saved = state.step if resume else -1
        limit = cfg.total_steps if stop_after is None else \
            min(cfg.total_steps, stop_after)
        while state.step < limit:
            picks = state.rng.integers(0, n, size=cfg.batch_size)
            batch = [prepared[i] for i in picks]
            breakdown = train_step(state, batch)
            writer.writerow(breakdown.as_row())
            if log is not None and (breakdown.step % 50 == 0
                                    or breakdown.step + 1 == cfg.total_steps):
                log(
                    f"step {breakdown.step}: total {breakdown.total:.4f} "
                    f"nll {breakdown.nll:.4f} wave-perp "
                    f"{breakdown.wave_perplexity:.1f}"
                )
            if state.step % cfg.checkpoint_every == 0:
                handle.flush()
                save_checkpoint(ckpt_path, state)
                last_saved = state.step
    if last_saved != state.step:
        save_checkpoint(ckpt_path, state)
    return state
