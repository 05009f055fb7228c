"""Differentiable layer primitives: 1-D convolutions, GRU, linear, losses.

Convolutions and the GRU recurrence are fused tape nodes with hand-derived
backward passes, so a teacher-forced pass over a few thousand timesteps
costs a short tape instead of one node per step. Everything composes with
the generic ops in :mod:`pitchvq.tensor`.

Shape conventions: convolutions run on ``(B, C, L)`` (a 2-D ``(C, L)``
input is treated as batch one), recurrences on ``(B, T, D)``.
"""
from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, ShapeError
from .tensor import Tensor, accumulate, make_node, sigmoid_np


def uniform_param(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    """Weight initialization: uniform in +-sqrt(1/fan_in)."""
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def _pad_pair(padding) -> tuple[int, int]:
    if isinstance(padding, tuple):
        left, right = padding
    else:
        left = right = int(padding)
    if left < 0 or right < 0:
        raise ShapeError(f"negative padding {padding}")
    return left, right


# -- conv1d ------------------------------------------------------------


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding=0) -> Tensor:
    """Cross-correlation along the last axis.

    ``weight`` is ``(C_out, C_in, k)``; output length is
    ``floor((L + pad_left + pad_right - k) / stride) + 1``.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"conv1d input must be (B, C, L), got {x.shape}")
    if weight.ndim != 3:
        raise ShapeError(f"conv1d weight must be (C_out, C_in, k), got {weight.shape}")
    if stride < 1:
        raise ShapeError(f"conv1d stride must be >= 1, got {stride}")
    b_sz, c_in, length = x.shape
    c_out, w_cin, kernel = weight.shape
    if c_in != w_cin:
        raise ShapeError(
            f"conv1d input channels {c_in} do not match weight C_in {w_cin}"
        )
    pl, pr = _pad_pair(padding)
    lp = length + pl + pr
    if lp < kernel:
        raise ShapeError(
            f"conv1d padded length {lp} is shorter than kernel {kernel}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv1d bias shape {bias.shape} != ({c_out},)")

    xpad = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    windows = sliding_window_view(xpad, kernel, axis=2)[:, :, ::stride]
    l_out = windows.shape[2]
    y = np.tensordot(windows, weight.data, axes=([1, 3], [1, 2]))
    y = np.ascontiguousarray(y.transpose(0, 2, 1))
    if bias is not None:
        y += bias.data[None, :, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(out):
        def run():
            g = out.grad
            if weight.requires_grad:
                accumulate(weight, np.tensordot(g, windows, axes=([0, 2], [0, 2])))
            if bias is not None and bias.requires_grad:
                accumulate(bias, g.sum(axis=(0, 2)))
            if x.requires_grad:
                gw = np.tensordot(g, weight.data, axes=(1, 0))  # (B, L', C_in, k)
                gw = gw.transpose(0, 2, 1, 3)
                dxp = np.zeros_like(xpad)
                for kk in range(kernel):
                    dxp[:, :, kk:kk + stride * l_out:stride] += gw[:, :, :, kk]
                accumulate(x, dxp[:, :, pl:pl + length])

        return run

    out = make_node(y, parents, bw)
    return out.reshape(c_out, l_out) if squeeze else out


def conv_out_length(length: int, kernel: int, stride: int, padding) -> int:
    pl, pr = _pad_pair(padding)
    return (length + pl + pr - kernel) // stride + 1


# -- transposed conv1d -------------------------------------------------


def conv_transpose1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 1) -> Tensor:
    """Adjoint of :func:`conv1d`; output length is exactly ``L * stride``.

    ``weight`` is ``(C_in, C_out, k)``. The raw overlapped output has length
    ``(L - 1) * stride + k``; any kernel overhang beyond ``L * stride`` is
    cropped symmetrically, and a kernel narrower than the stride leaves
    trailing zeros.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise ShapeError(f"conv_transpose1d input must be (B, C, L), got {x.shape}")
    if stride < 1:
        raise ShapeError(f"conv_transpose1d stride must be >= 1, got {stride}")
    b_sz, c_in, length = x.shape
    w_cin, c_out, kernel = weight.shape
    if c_in != w_cin:
        raise ShapeError(
            f"conv_transpose1d input channels {c_in} do not match weight C_in {w_cin}"
        )

    l_raw = (length - 1) * stride + kernel
    l_out = length * stride
    start = max(kernel - stride, 0) // 2

    spread = np.tensordot(x.data, weight.data, axes=(1, 0))  # (B, L, C_out, k)
    spread = spread.transpose(0, 2, 1, 3)
    raw = np.zeros((b_sz, c_out, l_raw))
    for kk in range(kernel):
        raw[:, :, kk:kk + stride * length:stride] += spread[:, :, :, kk]

    y = np.zeros((b_sz, c_out, l_out))
    stop = min(start + l_out, l_raw)
    y[:, :, :stop - start] = raw[:, :, start:stop]
    if bias is not None:
        y += bias.data[None, :, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(out):
        def run():
            g_raw = np.zeros((b_sz, c_out, l_raw))
            g_raw[:, :, start:stop] = out.grad[:, :, :stop - start]
            windows = sliding_window_view(g_raw, kernel, axis=2)[:, :, ::stride]
            windows = windows[:, :, :length]
            if x.requires_grad:
                accumulate(x, np.tensordot(
                    windows, weight.data, axes=([1, 3], [1, 2])).transpose(0, 2, 1))
            if weight.requires_grad:
                accumulate(weight, np.tensordot(
                    x.data, windows, axes=([0, 2], [0, 2])))
            if bias is not None and bias.requires_grad:
                accumulate(bias, out.grad.sum(axis=(0, 2)))

        return run

    out = make_node(y, parents, bw)
    return out.reshape(c_out, l_out) if squeeze else out


# -- GRU ---------------------------------------------------------------
#
# Gate layout along the 3H axis is [reset, update, candidate]. With
# a = h_prev @ W_h + b_h and input-side preactivation u:
#   r = sigmoid(u_r + a_r)
#   z = sigmoid(u_z + a_z)
#   n = tanh(u_n + r * a_n)        (reset applied after the recurrent matmul)
#   h = (1 - z) * n + z * h_prev
# so a saturated update gate (z -> 1) holds the previous state.


def gru_step_np(u: np.ndarray, h_prev: np.ndarray, w_h: np.ndarray,
                b_h: np.ndarray):
    """One recurrence step on raw arrays. Returns (h, r, z, n, a_n)."""
    hidden = h_prev.shape[-1]
    a = h_prev @ w_h + b_h
    r = sigmoid_np(u[..., :hidden] + a[..., :hidden])
    z = sigmoid_np(u[..., hidden:2 * hidden] + a[..., hidden:2 * hidden])
    a_n = a[..., 2 * hidden:]
    n = np.tanh(u[..., 2 * hidden:] + r * a_n)
    h = (1.0 - z) * n + z * h_prev
    return h, r, z, n, a_n


def gru_recurrence(u: Tensor, h0: Tensor, w_h: Tensor, b_h: Tensor) -> Tensor:
    """Run the recurrence over ``u`` of shape ``(B, T, 3H)``; returns ``(B, T, H)``.

    The whole sequence is one tape node; backward is an explicit
    backpropagation-through-time loop.
    """
    b_sz, t_len, three_h = u.shape
    hidden = three_h // 3
    if three_h != 3 * hidden or w_h.shape != (hidden, three_h):
        raise ShapeError(
            f"gru_recurrence: preactivation width {three_h} does not match "
            f"recurrent weight {w_h.shape}"
        )
    if h0.shape != (b_sz, hidden):
        raise ShapeError(f"gru_recurrence h0 shape {h0.shape} != ({b_sz}, {hidden})")

    w_h_d, b_h_d, u_d = w_h.data, b_h.data, u.data
    hs = np.empty((t_len + 1, b_sz, hidden))
    hs[0] = h0.data
    rs = np.empty((t_len, b_sz, hidden))
    zs = np.empty_like(rs)
    ns = np.empty_like(rs)
    ans = np.empty_like(rs)
    for t in range(t_len):
        h, r, z, n, a_n = gru_step_np(u_d[:, t], hs[t], w_h_d, b_h_d)
        hs[t + 1], rs[t], zs[t], ns[t], ans[t] = h, r, z, n, a_n
    y = np.ascontiguousarray(hs[1:].transpose(1, 0, 2))

    def bw(out):
        def run():
            g_out = out.grad
            dh = np.zeros((b_sz, hidden))
            du = np.empty((b_sz, t_len, three_h))
            dwh = np.zeros_like(w_h_d)
            dbh = np.zeros_like(b_h_d)
            da = np.empty((b_sz, three_h))
            w_h_t = w_h_d.T
            for t in range(t_len - 1, -1, -1):
                dh = dh + g_out[:, t]
                h_prev, r, z, n, a_n = hs[t], rs[t], zs[t], ns[t], ans[t]
                dz = dh * (h_prev - n) * z * (1.0 - z)
                dn = dh * (1.0 - z) * (1.0 - n * n)
                dr = dn * a_n * r * (1.0 - r)
                du_t = du[:, t]
                du_t[:, :hidden] = dr
                du_t[:, hidden:2 * hidden] = dz
                du_t[:, 2 * hidden:] = dn
                da[:, :hidden] = dr
                da[:, hidden:2 * hidden] = dz
                da[:, 2 * hidden:] = dn * r
                dwh += h_prev.T @ da
                dbh += da.sum(axis=0)
                dh = dh * z + da @ w_h_t
            accumulate(u, du)
            accumulate(h0, dh)
            accumulate(w_h, dwh)
            accumulate(b_h, dbh)

        return run

    return make_node(y, (u, h0, w_h, b_h), bw)


def gru_cell(x_t: Tensor, h_prev: Tensor, w_x: Tensor, w_h: Tensor,
             b_x: Tensor, b_h: Tensor) -> Tensor:
    """Single GRU step; accepts unbatched ``(D,)``/``(H,)`` or batched 2-D inputs."""
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = x_t.reshape(1, -1)
        h_prev = h_prev.reshape(1, -1)
    if x_t.shape[0] != h_prev.shape[0]:
        raise ShapeError(
            f"gru_cell batch mismatch: x {x_t.shape[0]} vs h {h_prev.shape[0]}"
        )
    u = (x_t @ w_x) + b_x
    out = gru_recurrence(u.reshape(x_t.shape[0], 1, -1), h_prev, w_h, b_h)
    out = out.reshape(x_t.shape[0], -1)
    return out.reshape(-1) if squeeze else out


# -- pointwise / losses ------------------------------------------------


def gated_activation(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise ``tanh(a) * sigmoid(b)``; both halves must agree in shape."""
    if a.shape != b.shape:
        raise ShapeError(
            f"gated_activation shape mismatch: {a.shape} vs {b.shape}"
        )
    return a.tanh() * b.sigmoid()


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy over rows of ``(M, K)`` logits.

    Numerically stable via per-row max subtraction; gradient is
    ``softmax - onehot`` (scaled by the reduction weight).
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects (M, K) logits, got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    m, k = logits.shape
    if targets.shape != (m,):
        raise ShapeError(f"cross_entropy targets shape {targets.shape} != ({m},)")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= k:
        bad = targets[(targets < 0) | (targets >= k)][0]
        raise DataError(f"class index {bad} out of range [0, {k})")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    norm = expo.sum(axis=1)
    rows = np.arange(m)
    losses = np.log(norm) - shifted[rows, targets]
    scale = 1.0 / m if reduction == "mean" else 1.0
    value = losses.sum() * scale

    def bw(out):
        def run():
            g = expo / norm[:, None]
            g[rows, targets] -= 1.0
            accumulate(logits, g * (float(out.grad) * scale))

        return run

    return make_node(np.asarray(value), (logits,), bw)


def softmax_cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Negative log softmax probability of ``target`` for a single logit vector."""
    if logits.ndim != 1:
        raise ShapeError(f"expected 1-D logits, got {logits.shape}")
    return cross_entropy(logits.reshape(1, -1), np.asarray([target]), "sum")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight (+ bias)`` with leading batch axes flattened as needed."""
    lead = x.shape[:-1]
    y = x.reshape(-1, x.shape[-1]) @ weight
    y = y.reshape(*lead, weight.shape[1])
    if bias is not None:
        y = y + bias
    return y


# -- layer classes -----------------------------------------------------


class Conv1d:
    """1-D convolution layer with optional additive condition projection.

    When ``cond_dim > 0`` a learned projection of the per-sequence condition
    vector is added to the preactivation as a channel bias.
    """

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 padding=0, *, rng: np.random.Generator, cond_dim: int = 0):
        fan = c_in * kernel
        self.weight = uniform_param(rng, (c_out, c_in, kernel), fan)
        self.bias = uniform_param(rng, (c_out,), fan)
        self.cond_weight = (
            uniform_param(rng, (cond_dim, c_out), cond_dim) if cond_dim else None
        )
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor, cond: Tensor | None = None) -> Tensor:
        y = conv1d(x, self.weight, self.bias, self.stride, self.padding)
        if self.cond_weight is not None:
            if cond is None:
                raise ShapeError("conv layer built with cond_dim but no cond given")
            proj = cond @ self.cond_weight
            y = y + proj.reshape(proj.shape[0], proj.shape[1], 1)
        return y

    def params(self) -> dict[str, Tensor]:
        out = {"weight": self.weight, "bias": self.bias}
        if self.cond_weight is not None:
            out["cond_weight"] = self.cond_weight
        return out


class ConvTranspose1d:
    """Transposed 1-D convolution; output length is input length x stride."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int = 1,
                 *, rng: np.random.Generator, cond_dim: int = 0):
        fan = c_in * kernel
        self.weight = uniform_param(rng, (c_in, c_out, kernel), fan)
        self.bias = uniform_param(rng, (c_out,), fan)
        self.cond_weight = (
            uniform_param(rng, (cond_dim, c_out), cond_dim) if cond_dim else None
        )
        self.stride = stride

    def __call__(self, x: Tensor, cond: Tensor | None = None) -> Tensor:
        y = conv_transpose1d(x, self.weight, self.bias, self.stride)
        if self.cond_weight is not None:
            if cond is None:
                raise ShapeError("tconv layer built with cond_dim but no cond given")
            proj = cond @ self.cond_weight
            y = y + proj.reshape(proj.shape[0], proj.shape[1], 1)
        return y

    def params(self) -> dict[str, Tensor]:
        out = {"weight": self.weight, "bias": self.bias}
        if self.cond_weight is not None:
            out["cond_weight"] = self.cond_weight
        return out


class GRU:
    """GRU over ``(B, T, D)`` sequences with fused BPTT backward."""

    def __init__(self, d_in: int, hidden: int, *, rng: np.random.Generator,
                 cond_dim: int = 0):
        self.hidden = hidden
        self.w_x = uniform_param(rng, (d_in, 3 * hidden), d_in)
        self.w_h = uniform_param(rng, (hidden, 3 * hidden), hidden)
        self.b_x = uniform_param(rng, (3 * hidden,), d_in)
        self.b_h = uniform_param(rng, (3 * hidden,), hidden)
        self.cond_weight = (
            uniform_param(rng, (cond_dim, 3 * hidden), cond_dim) if cond_dim else None
        )

    def preact(self, x: Tensor, cond: Tensor | None = None) -> Tensor:
        """Input-side gate preactivations ``(B, T, 3H)``."""
        u = linear(x, self.w_x, self.b_x)
        if self.cond_weight is not None:
            if cond is None:
                raise ShapeError("GRU built with cond_dim but no cond given")
            proj = cond @ self.cond_weight
            u = u + proj.reshape(proj.shape[0], 1, proj.shape[1])
        return u

    def __call__(self, x: Tensor, cond: Tensor | None = None,
                 h0: Tensor | None = None) -> Tensor:
        if x.ndim != 3:
            raise ShapeError(f"GRU input must be (B, T, D), got {x.shape}")
        if h0 is None:
            h0 = Tensor(np.zeros((x.shape[0], self.hidden)))
        return gru_recurrence(self.preact(x, cond), h0, self.w_h, self.b_h)

    def params(self) -> dict[str, Tensor]:
        out = {"w_x": self.w_x, "w_h": self.w_h, "b_x": self.b_x, "b_h": self.b_h}
        if self.cond_weight is not None:
            out["cond_weight"] = self.cond_weight
        return out


class Linear:
    def __init__(self, d_in: int, d_out: int, *, rng: np.random.Generator,
                 cond_dim: int = 0):
        self.weight = uniform_param(rng, (d_in, d_out), d_in)
        self.bias = uniform_param(rng, (d_out,), d_in)
        self.cond_weight = (
            uniform_param(rng, (cond_dim, d_out), cond_dim) if cond_dim else None
        )

    def __call__(self, x: Tensor, cond: Tensor | None = None) -> Tensor:
        y = linear(x, self.weight, self.bias)
        if self.cond_weight is not None:
            if cond is None:
                raise ShapeError("linear layer built with cond_dim but no cond given")
            proj = cond @ self.cond_weight
            if y.ndim == 3:
                proj = proj.reshape(proj.shape[0], 1, proj.shape[1])
            y = y + proj
        return y

    def params(self) -> dict[str, Tensor]:
        out = {"weight": self.weight, "bias": self.bias}
        if self.cond_weight is not None:
            out["cond_weight"] = self.cond_weight
        return out


def collect_params(**modules) -> dict[str, Tensor]:
    """Flatten submodule parameters into one dict, dot-joining the names."""
    out: dict[str, Tensor] = {}
    for prefix, module in modules.items():
        for key, value in module.params().items():
            out[f"{prefix}.{key}"] = value
    return out
