"""Downsampling encoders for the waveform and pitch branches.

Both branches share the same topology: a stack of ten blocks, each a wide
convolution, a gated pair, an output convolution, and a strided 1x1
residual projection.  Six blocks decimate by 2 and four keep the rate, for
an overall factor of 64, so a length-T input yields ceil(T / 64) latent
frames of dimension 128 on either branch.

The pitch branch first refines the step-expanded per-sample F0 with a
learned stride-1 transposed convolution, smoothing the frame-rate staircase
into something the shared block stack can use.
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .layers import Conv1d, ConvTranspose1d, collect_params
from .tensor import Tensor

DEFAULT_STRIDES = (2, 2, 2, 2, 2, 2, 1, 1, 1, 1)
LATENT_DIM = 128
BLOCK_WIDE_CHANNELS = 256


def scale_waveform(samples: np.ndarray) -> np.ndarray:
    """Map int16 samples onto [-1, 1)."""
    return np.asarray(samples, dtype=np.float64) / 32768.0


def inject_noise(
    x: np.ndarray,
    add_std: float,
    mul_std: float,
    rng: np.random.Generator,
    training: bool = True,
) -> np.ndarray:
    """Additive and multiplicative Gaussian corruption, training mode only."""
    if add_std < 0 or mul_std < 0:
        raise ShapeError("noise standard deviations must be non-negative")
    if not training or (add_std == 0 and mul_std == 0):
        return x
    out = np.asarray(x, dtype=np.float64)
    if mul_std > 0:
        out = out * (1.0 + rng.normal(0.0, mul_std, size=out.shape))
    if add_std > 0:
        out = out + rng.normal(0.0, add_std, size=out.shape)
    return out


def _ceil_padding(length: int, kernel: int, stride: int) -> tuple[int, int]:
    """Padding (left, right) so the conv output length is ceil(length/stride)."""
    remainder = length % stride
    total = kernel - (stride if remainder == 0 else remainder)
    left = (kernel - stride) // 2
    if total < left:
        raise ShapeError(
            f"kernel {kernel} too small for ceil-mode stride {stride} at length {length}"
        )
    return left, total - left


class DownsamplingBlock:
    """conv_a (wide) -> gated pair -> conv_out, plus a strided 1x1 residual."""

    def __init__(
        self,
        in_channels: int,
        stride: int,
        rng: np.random.Generator,
        out_channels: int = LATENT_DIM,
        wide_channels: int = BLOCK_WIDE_CHANNELS,
    ):
        kernel = 4 if stride > 1 else 3
        self.stride = stride
        self.kernel = kernel
        self.conv_a = Conv1d(in_channels, wide_channels, kernel, stride=stride, rng=rng)
        self.gate_a = Conv1d(wide_channels, out_channels, 3, padding=1, rng=rng)
        self.gate_b = Conv1d(wide_channels, out_channels, 3, padding=1, rng=rng)
        self.conv_out = Conv1d(out_channels, out_channels, 3, padding=1, rng=rng)
        self.residual = Conv1d(in_channels, out_channels, 1, stride=stride, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        from .layers import conv1d, gated_activation

        length = x.shape[-1]
        pad = _ceil_padding(length, self.kernel, self.stride)
        a = conv1d(x, self.conv_a.weight, self.conv_a.bias, self.stride, pad).relu()
        gated = gated_activation(self.gate_a(a), self.gate_b(a))
        out = self.conv_out(gated)
        return out + self.residual(x)

    def params(self):
        return collect_params(
            conv_a=self.conv_a,
            gate_a=self.gate_a,
            gate_b=self.gate_b,
            conv_out=self.conv_out,
            residual=self.residual,
        )


class Encoder:
    """Stack of downsampling blocks mapping (B, C, T) to (B, N, latent_dim)."""

    def __init__(
        self,
        in_channels: int,
        rng: np.random.Generator,
        strides: tuple[int, ...] = DEFAULT_STRIDES,
        latent_dim: int = LATENT_DIM,
        wide_channels: int = BLOCK_WIDE_CHANNELS,
    ):
        if not strides or any(s < 1 for s in strides):
            raise ShapeError(f"invalid stride list {strides}")
        self.strides = tuple(int(s) for s in strides)
        self.factor = int(np.prod(self.strides))
        self.latent_dim = latent_dim
        self.blocks = []
        channels = in_channels
        for stride in self.strides:
            self.blocks.append(
                DownsamplingBlock(channels, stride, rng, latent_dim, wide_channels)
            )
            channels = latent_dim

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3:
            raise ShapeError(f"encoder expects (B, C, T), got {x.shape}")
        if x.shape[-1] < self.factor:
            raise ShapeError(
                f"input length {x.shape[-1]} shorter than downsampling factor "
                f"{self.factor}"
            )
        for block in self.blocks:
            x = block(x)
        return x.transpose(0, 2, 1)  # (B, N, D)

    def output_length(self, t: int) -> int:
        return -(-t // self.factor)

    def receptive_field(self) -> int:
        """Input samples influencing one latent frame (residual path excluded)."""
        rf, jump = 1, 1
        for block in self.blocks:
            for kernel, stride in ((block.kernel, block.stride), (3, 1), (3, 1)):
                rf += (kernel - 1) * jump
                jump *= stride
        return rf

    def params(self):
        return collect_params(
            **{f"block{i}": b for i, b in enumerate(self.blocks)}
        )


class F0Refiner:
    """Learned stride-1 transposed conv smoothing the stepwise F0 stream."""

    def __init__(self, rng: np.random.Generator, kernel: int = 9):
        self.tconv = ConvTranspose1d(1, 1, kernel, stride=1, rng=rng)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 2:
            x = x.reshape(1, *x.shape)
        if x.ndim != 3 or x.shape[1] != 1:
            raise ShapeError(f"F0 refiner expects (B, 1, T), got {x.shape}")
        return self.tconv(x)

    def params(self):
        return collect_params(tconv=self.tconv)
