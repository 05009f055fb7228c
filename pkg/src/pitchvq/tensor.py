"""Reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray plus an optional gradient. Operations
record closure-based backward functions on the output node; calling
``backward()`` on a scalar loss replays them in reverse topological order.
One tape per training step: the graph lives only as long as the output
tensors referencing it.

Layer-level fused ops (convolutions, GRU sequences) live in ``layers`` and
build their nodes through :func:`make_node`, so this module stays limited to
the generic elementwise / reduction / shape calculus.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ShapeError

_grad_enabled: bool = True


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def grad_array(self) -> np.ndarray:
        """Gradient as an array; unreached tensors read as zeros."""
        if self.grad is None:
            return np.zeros_like(self.data)
        return self.grad

    def backward(self) -> None:
        """Propagate d(self)/d(leaf) to every reachable ``requires_grad`` leaf.

        ``self`` must be a scalar (size one); seeds its own grad with 1.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward()

    # -- operator sugar (definitions below) ----------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_as_tensor(other))

    def __rsub__(self, other):
        return add(_as_tensor(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def square(self):
        return square(self)

    def stop_gradient(self):
        return stop_gradient(self)

    def sum(self):
        return tsum(self)

    def mean(self):
        return tmean(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_node(
    data: np.ndarray,
    parents: Sequence[Tensor],
    backward: Callable[[Tensor], Callable[[], None]],
) -> Tensor:
    """Create an op output node.

    ``backward`` is called with the output tensor and must return the closure
    that scatters ``out.grad`` into the parents. It is only invoked when the
    tape is active and some parent requires a gradient.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward(out)
    return out


def accumulate(t: Tensor, g: np.ndarray) -> None:
    """Add ``g`` into ``t.grad`` if ``t`` participates in the tape."""
    if not t.requires_grad:
        return
    if t.grad is None:
        # first contribution: copy instead of zeros-then-add (one pass,
        # and the copy keeps callers' buffers unaliased)
        grad = np.array(g, dtype=np.float64)
        if grad.shape != t.data.shape:
            grad = np.broadcast_to(grad, t.data.shape).copy()
        t.grad = grad
    else:
        t.grad += g


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverses numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(out):
        def run():
            accumulate(a, _unbroadcast(out.grad, a.shape))
            accumulate(b, _unbroadcast(out.grad, b.shape))

        return run

    return make_node(a.data + b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(out):
        def run():
            accumulate(a, _unbroadcast(out.grad * b.data, a.shape))
            accumulate(b, _unbroadcast(out.grad * a.data, b.shape))

        return run

    return make_node(a.data * b.data, (a, b), bw)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bw(out):
        def run():
            accumulate(a, out.grad * (1.0 - out.data * out.data))

        return run

    return make_node(y, (a,), bw)


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    """Overflow-safe logistic function on raw arrays."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = sigmoid_np(a.data)

    def bw(out):
        def run():
            accumulate(a, out.grad * out.data * (1.0 - out.data))

        return run

    return make_node(y, (a,), bw)


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def bw(out):
        def run():
            accumulate(a, out.grad * (a.data > 0.0))

        return run

    return make_node(y, (a,), bw)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def bw(out):
        def run():
            accumulate(a, out.grad * out.data)

        return run

    return make_node(y, (a,), bw)


def log(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            accumulate(a, out.grad / a.data)

        return run

    return make_node(np.log(a.data), (a,), bw)


def square(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            accumulate(a, out.grad * 2.0 * a.data)

        return run

    return make_node(a.data * a.data, (a,), bw)


# -- reductions --------------------------------------------------------


def tsum(a: Tensor) -> Tensor:
    def bw(out):
        def run():
            accumulate(a, np.full_like(a.data, float(out.grad)))

        return run

    return make_node(np.asarray(a.data.sum()), (a,), bw)


def tmean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(out):
        def run():
            accumulate(a, np.full_like(a.data, float(out.grad) / n))

        return run

    return make_node(np.asarray(a.data.mean()), (a,), bw)


# -- shape -------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    def bw(out):
        def run():
            accumulate(a, out.grad.reshape(a.shape))

        return run

    return make_node(a.data.reshape(shape), (a,), bw)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(out):
        def run():
            accumulate(a, out.grad.transpose(inv))

        return run

    return make_node(a.data.transpose(axes), (a,), bw)


def concat(tensors: Iterable[Tensor], axis: int) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bw(out):
        def run():
            for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                accumulate(t, out.grad[tuple(idx)])

        return run

    return make_node(np.concatenate([t.data for t in ts], axis=axis), ts, bw)


def expand_time(a: Tensor, length: int) -> Tensor:
    """Tile a per-sequence vector ``(B, C)`` into a stream ``(B, C, length)``."""
    if a.ndim != 2:
        raise ShapeError(f"expand_time expects (B, C), got {a.shape}")

    def bw(out):
        def run():
            accumulate(a, out.grad.sum(axis=2))

        return run

    data = np.broadcast_to(a.data[:, :, None], a.shape + (length,)).copy()
    return make_node(data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(
            f"matmul supports 2-D operands, got {a.shape} @ {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.shape[1]} vs {b.shape[0]}"
        )

    def bw(out):
        def run():
            accumulate(a, out.grad @ b.data.T)
            accumulate(b, a.data.T @ out.grad)

        return run

    return make_node(a.data @ b.data, (a, b), bw)


# -- gradient routing --------------------------------------------------


def stop_gradient(a: Tensor) -> Tensor:
    """Forward identity; blocks all gradient flow into ``a``."""
    return Tensor(a.data.copy())


def straight_through(z: Tensor, e: Tensor) -> Tensor:
    """Forward value of ``e``; the full output gradient is routed to ``z``.

    ``e`` receives nothing here, by construction: its training signal must
    arrive through a separate loss term.
    """
    if z.shape != e.shape:
        raise ShapeError(
            f"straight_through shape mismatch: z {z.shape} vs e {e.shape}"
        )

    def bw(out):
        def run():
            accumulate(z, out.grad)

        return run

    return make_node(e.data.copy(), (z,), bw)
