"""Finite-difference gradient verification.

Central differences with a perturbation proportional to the coordinate
scale. Used throughout the test suite; kept in the package because the
training smoke tools reuse it for diagnostics.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def central_difference(f: Callable[[], Tensor], tensor: Tensor,
                       index: tuple, eps: float) -> float:
    """d f / d tensor[index] by symmetric perturbation; forward passes only."""
    original = tensor.data[index]
    with no_grad():
        tensor.data[index] = original + eps
        f_plus = float(f().data)
        tensor.data[index] = original - eps
        f_minus = float(f().data)
    tensor.data[index] = original
    return (f_plus - f_minus) / (2.0 * eps)


def check_gradients(f: Callable[[], Tensor], tensors: Sequence[Tensor],
                    rng: np.random.Generator, samples: int = 6,
                    rel_tol: float = 1e-3, abs_tol: float = 1e-7,
                    eps_scale: float = 1e-4) -> float:
    """Compare analytic gradients of ``f()`` against central differences.

    For each tensor, up to ``samples`` coordinates are drawn at random and
    perturbed by ``eps_scale * max(1, |value|)``. Raises ``AssertionError``
    on the first disagreement; returns the worst relative error seen.
    """
    for t in tensors:
        t.zero_grad()
    loss = f()
    loss.backward()
    worst = 0.0
    for t in tensors:
        grad = t.grad_array()
        n = t.data.size
        count = min(samples, n)
        flat_choices = rng.choice(n, size=count, replace=False)
        for flat in flat_choices:
            index = np.unravel_index(int(flat), t.data.shape)
            eps = eps_scale * max(1.0, abs(float(t.data[index])))
            numeric = central_difference(f, t, index, eps)
            analytic = float(grad[index])
            err = abs(analytic - numeric)
            bound = abs_tol + rel_tol * max(abs(analytic), abs(numeric))
            if err > bound:
                raise AssertionError(
                    f"gradient mismatch at {index} (shape {t.data.shape}): "
                    f"analytic {analytic:.6e}, numeric {numeric:.6e}, "
                    f"abs err {err:.3e} > bound {bound:.3e}"
                )
            denom = max(abs(analytic), abs(numeric), 1.0)
            worst = max(worst, err / denom)
    return worst
