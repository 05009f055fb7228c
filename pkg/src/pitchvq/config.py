"""Run configuration: parsing, validation, hashing, model construction.

Configs are plain ``key = value`` text files.  Two hashes guard different
things: the architecture hash covers only fields that determine parameter
shapes and semantics (a checkpoint refuses to load under a different
architecture), while the full hash covers every field (resuming training
demands an identical run recipe).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import MODES, VqVaeModel

ARCH_FIELDS = (
    "mode", "sample_rate", "frame_shift", "latent_dim", "enc_wide_channels",
    "enc_strides", "f0_refine_kernel", "k_wave", "k_f0", "up_factors",
    "up_channels", "ar_channels", "wavernn_hidden", "head_hidden", "cond_dim",
)


@dataclass
class RunConfig:
    mode: str = "extended"
    seed: int = 1234

    # signal front end
    sample_rate: int = 22050
    frame_shift: float = 0.005
    target_rms: float = 1642.0  # active-sample RMS for a -26 dBov level

    # encoder / bottleneck
    latent_dim: int = 128
    enc_wide_channels: int = 256
    enc_strides: tuple = (2, 2, 2, 2, 2, 2, 1, 1, 1, 1)
    noise_add: float = 0.01
    noise_mul: float = 0.02
    f0_refine_kernel: int = 9
    k_wave: int = 512
    k_f0: int = 10
    cond_dim: int = 100

    # decoder
    up_factors: tuple = (4, 4, 4)
    up_channels: int = 128
    ar_channels: int = 64
    wavernn_hidden: int = 256
    head_hidden: int = 128

    # optimization
    batch_size: int = 8
    crop_len: int = 4096
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 5.0
    total_steps: int = 20000
    checkpoint_every: int = 1000

    # loss schedules
    beta_start: float = 0.001
    beta_end: float = 0.01
    beta_ramp_steps: int = 1000
    gamma_high: float = 10.0
    gamma_low: float = 0.1
    gamma_hold_steps: int = 10000
    gamma_end_steps: int = 100000

    # evaluation
    f0_min: float = 50.0
    f0_max: float = 600.0
    yin_threshold: float = 0.12

    # -- derived --------------------------------------------------------

    @property
    def downsample_factor(self) -> int:
        return int(np.prod(self.enc_strides))

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        positive = (
            "sample_rate", "frame_shift", "target_rms", "latent_dim",
            "enc_wide_channels", "f0_refine_kernel", "k_wave", "k_f0",
            "cond_dim", "up_channels", "ar_channels", "wavernn_hidden",
            "head_hidden", "batch_size", "crop_len", "learning_rate",
            "total_steps", "checkpoint_every", "beta_ramp_steps",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.enc_strides or not self.up_factors:
            raise ConfigError("stride/factor lists must be non-empty")
        if len(self.up_factors) != 3:
            raise ConfigError(f"up_factors must have 3 entries, got {self.up_factors}")
        factor = self.downsample_factor
        if factor != int(np.prod(self.up_factors)):
            raise ConfigError(
                f"product of enc_strides ({factor}) must equal product of "
                f"up_factors ({int(np.prod(self.up_factors))})"
            )
        if self.crop_len % factor != 0:
            raise ConfigError(
                f"crop_len {self.crop_len} must be a multiple of the "
                f"downsampling factor {factor}"
            )
        if self.noise_add < 0 or self.noise_mul < 0:
            raise ConfigError("noise standard deviations must be non-negative")
        if self.gamma_end_steps <= self.gamma_hold_steps:
            raise ConfigError("gamma_end_steps must exceed gamma_hold_steps")
        if round(self.frame_shift * self.sample_rate) < 1:
            raise ConfigError("frame_shift spans no samples at this rate")
        if not 0 < self.adam_beta1 < 1 or not 0 < self.adam_beta2 < 1:
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.f0_min <= 0 or self.f0_max <= self.f0_min:
            raise ConfigError("need 0 < f0_min < f0_max")
        return self

    # -- serialization --------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def arch_hash(self) -> str:
        return self._hash(ARCH_FIELDS)

    def full_hash(self) -> str:
        return self._hash(tuple(f.name for f in fields(self)))

    def _hash(self, names) -> str:
        parts = []
        for name in names:
            value = getattr(self, name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parts.append(f"{name}={value}")
        digest = hashlib.sha256("\n".join(parts).encode()).hexdigest()
        return digest[:16]

    # -- model factory --------------------------------------------------

    def build_model(self, rng: np.random.Generator) -> VqVaeModel:
        return VqVaeModel(
            self.mode,
            rng,
            latent_dim=self.latent_dim,
            enc_strides=self.enc_strides,
            enc_wide_channels=self.enc_wide_channels,
            k_wave=self.k_wave,
            k_f0=self.k_f0,
            cond_dim=self.cond_dim,
            up_factors=self.up_factors,
            up_channels=self.up_channels,
            ar_channels=self.ar_channels,
            wavernn_hidden=self.wavernn_hidden,
            head_hidden=self.head_hidden,
            f0_refine_kernel=self.f0_refine_kernel,
            noise_add=self.noise_add,
            noise_mul=self.noise_mul,
        )


def _coerce(name: str, raw: str, kind) -> object:
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is str:
            return raw
        if kind is tuple:
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"config field {name}: cannot parse {raw!r}") from exc
    raise ConfigError(f"config field {name} has unsupported type {kind}")


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines on top of defaults (or a given base)."""
    cfg = base if base is not None else RunConfig()
    types = {f.name: f.type for f in fields(RunConfig)}
    kinds = {"str": str, "int": int, "float": float, "tuple": tuple}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in types:
            raise ConfigError(f"config line {lineno}: unknown field {key!r}")
        kind = kinds.get(types[key], types[key]) if isinstance(types[key], str) \
            else types[key]
        values[key] = _coerce(key, raw, kind)
    merged = {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}
    merged.update(values)
    return RunConfig(**merged).validate()


def load_config(path: str | Path | None, overrides: dict[str, str] | None = None
                ) -> RunConfig:
    """Config file plus command-line overrides; an override always wins."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        cfg = parse_config(text)
    if overrides:
        lines = "\n".join(f"{k} = {v}" for k, v in overrides.items())
        cfg = parse_config(lines, base=cfg)
    return cfg.validate()


def write_config(path: str | Path, cfg: RunConfig) -> None:
    Path(path).write_text(cfg.to_text())
