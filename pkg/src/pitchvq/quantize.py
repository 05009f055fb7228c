"""Vector-quantization bottleneck: codebooks, nearest-neighbor lookup, losses.

Latent rows are snapped to their closest codebook entry under squared
Euclidean distance.  The forward pass hands the decoder the centroid while
the straight-through estimator carries the decoder's gradient back to the
encoder unchanged; the codebook itself learns only through the codebook
loss, and the encoder is additionally pulled toward its assigned centroid
by the commitment loss.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NumericError, ShapeError
from .tensor import Tensor, make_node, straight_through

__all__ = [
    "Codebook",
    "CodeSequence",
    "CodebookHealth",
    "quantize",
    "gather",
    "straight_through",
    "vq_losses",
    "codebook_health",
    "write_codes",
]


class Codebook:
    """K learned centroid rows of dimension D, plus usage counters."""

    def __init__(self, num_codes: int, dim: int, rng: np.random.Generator):
        if num_codes < 1 or dim < 1:
            raise ShapeError(f"codebook needs K, D >= 1, got {num_codes}x{dim}")
        bound = 1.0 / num_codes
        self.vectors = Tensor(
            rng.uniform(-bound, bound, size=(num_codes, dim)), requires_grad=True
        )
        self.usage_counts = np.zeros(num_codes, dtype=np.int64)

    @property
    def num_codes(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def reset_usage(self) -> None:
        self.usage_counts[:] = 0

    def params(self) -> dict[str, Tensor]:
        return {"vectors": self.vectors}


@dataclass(frozen=True)
class CodeSequence:
    indices: np.ndarray  # (N,) int64
    vectors: np.ndarray  # (N, D) centroid copies


def nearest_indices(z: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Row-wise argmin of squared Euclidean distance; ties pick the lowest index."""
    # ||z - e||^2 expanded; the z^2 term is constant per row and dropped
    cross = z @ vectors.T
    norms = np.sum(vectors * vectors, axis=1)
    return np.argmin(norms[None, :] - 2.0 * cross, axis=1)


def quantize(z, book: Codebook, update_usage: bool = True) -> CodeSequence:
    data = z.data if isinstance(z, Tensor) else np.asarray(z, dtype=np.float64)
    if data.ndim != 2 or data.shape[1] != book.dim:
        raise ShapeError(
            f"latents {data.shape} do not match codebook dimension {book.dim}"
        )
    if not np.all(np.isfinite(data)):
        raise NumericError("non-finite latents reached the quantizer")
    indices = nearest_indices(data, book.vectors.data)
    if update_usage:
        np.add.at(book.usage_counts, indices, 1)
    return CodeSequence(indices, book.vectors.data[indices].copy())


def gather(book: Codebook, indices: np.ndarray) -> Tensor:
    """Codebook rows as a differentiable (N, D) tensor.

    Backward scatters the incoming gradient into the selected rows, so
    repeated indices accumulate.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if np.any(indices < 0) or np.any(indices >= book.num_codes):
        raise ShapeError("code index outside the codebook")
    vec = book.vectors

    def backward(out):
        def run():
            if vec.requires_grad:
                full = np.zeros_like(vec.data)
                np.add.at(full, indices, out.grad)
                vec.grad = full if vec.grad is None else vec.grad + full

        return run

    return make_node(vec.data[indices], (vec,), backward)


def vq_losses(z: Tensor, e: Tensor, beta: float) -> tuple[Tensor, Tensor]:
    """Codebook and commitment losses, each a mean over all N*D elements.

    The codebook loss moves centroids toward the (frozen) encoder output;
    the commitment loss scales by beta and pulls the encoder toward its
    (frozen) centroid.
    """
    if z.shape != e.shape:
        raise ShapeError(f"latent/centroid shape mismatch: {z.shape} vs {e.shape}")
    codebook_loss = (e - z.stop_gradient()).square().mean()
    commitment_loss = (z - e.stop_gradient()).square().mean() * beta
    return codebook_loss, commitment_loss


@dataclass(frozen=True)
class CodebookHealth:
    perplexity: float
    dead_codes: int
    total_uses: int
    num_codes: int


def codebook_health(book: Codebook) -> CodebookHealth:
    """Usage statistics since the last reset.

    Perplexity exp(H) of the empirical code distribution lies in [1, K];
    it is reported as 0.0 when nothing has been quantized yet.  Dead codes
    are counted, never re-seeded: silently replacing rows would change
    what the model is optimizing.
    """
    counts = book.usage_counts
    total = int(counts.sum())
    dead = int(np.sum(counts == 0))
    if total == 0:
        return CodebookHealth(0.0, dead, 0, book.num_codes)
    p = counts[counts > 0] / total
    perplexity = float(np.exp(-np.sum(p * np.log(p))))
    return CodebookHealth(perplexity, dead, total, book.num_codes)


def write_codes(path: str | Path, entries) -> None:
    """Write `id idx idx ...` lines, one utterance per line."""
    lines = []
    for utt_id, indices in entries:
        lines.append(" ".join([str(utt_id)] + [str(int(i)) for i in indices]))
    Path(path).write_text("\n".join(lines) + "\n")
