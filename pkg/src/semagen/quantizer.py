"""Vector-quantization core.

A codebook is a learned set of prototype vectors. Each input vector is
replaced by its L2-nearest prototype; the discrete index grid is the latent
code, and two quadratic penalties train prototypes and encoder respectively.
Gradients cross the non-differentiable assignment via the straight-through
estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


class Codebook(nn.Module):
    """K prototype vectors of dimension D, stored as a (K, D) parameter.

    Entries are initialized i.i.d. from N(0, 1/D) so their scale matches
    typical encoder outputs; entry order is stable across save/load.
    """

    def __init__(self, num_entries: int, dim: int):
        super().__init__()
        if num_entries < 2:
            raise ValueError(f"codebook needs >= 2 entries, got {num_entries}")
        if dim < 1:
            raise ValueError(f"codebook dim must be >= 1, got {dim}")
        entries = torch.randn(num_entries, dim) / math.sqrt(dim)
        self.entries = nn.Parameter(entries)

    @classmethod
    def from_entries(cls, entries: torch.Tensor) -> "Codebook":
        if not torch.isfinite(entries).all():
            raise ValueError("codebook entries must be finite")
        book = cls(entries.shape[0], entries.shape[1])
        book.entries = nn.Parameter(entries.detach().clone())
        return book

    @property
    def num_entries(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def lookup(self, indices: torch.Tensor) -> torch.Tensor:
        """Map an integer index grid to its prototype vectors, shape (..., D)."""
        return self.entries[indices]


@dataclass
class QuantizationResult:
    """Output of one quantization pass.

    indices:         integer grid of nearest-prototype ids, shape (...,)
    quantized:       prototype vectors at those ids, shape (..., D)
    codebook_loss:   mean over positions of ||stopgrad(x) - e||^2
    commitment_loss: mean over positions of ||x - stopgrad(e)||^2 (weight
                     beta is applied by the caller, not here)
    """

    indices: torch.Tensor
    quantized: torch.Tensor
    codebook_loss: torch.Tensor
    commitment_loss: torch.Tensor


def quantize(encodings: torch.Tensor, codebook: Codebook) -> QuantizationResult:
    """Assign every (..., D) vector to its L2-nearest prototype.

    Ties break to the lowest entry index. Both losses average the full
    squared residual norm over grid positions.
    """
    if encodings.shape[-1] != codebook.dim:
        raise ValueError(
            f"encoding dim {encodings.shape[-1]} != codebook dim {codebook.dim}"
        )
    if not torch.isfinite(encodings).all():
        raise ValueError("encodings contain non-finite values")

    entries = codebook.entries.to(encodings.dtype)
    flat = encodings.reshape(-1, codebook.dim)
    # ||x - e||^2 expanded; argmin of a row returns its first (lowest) index.
    distances = (
        flat.pow(2).sum(dim=1, keepdim=True)
        - 2.0 * flat @ entries.t()
        + entries.pow(2).sum(dim=1)
    )
    indices = distances.argmin(dim=1).reshape(encodings.shape[:-1])

    quantized = codebook.lookup(indices).to(encodings.dtype)
    codebook_loss = (encodings.detach() - quantized).pow(2).sum(dim=-1).mean()
    commitment_loss = (encodings - quantized.detach()).pow(2).sum(dim=-1).mean()
    return QuantizationResult(indices, quantized, codebook_loss, commitment_loss)


class _CopyGradient(torch.autograd.Function):
    @staticmethod
    def forward(ctx, encodings, quantized):
        return quantized.clone()

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output, None


def straight_through(encodings: torch.Tensor, quantized: torch.Tensor) -> torch.Tensor:
    """Forward the quantized values bit-for-bit; backward copies the incoming
    gradient to `encodings` unchanged.

    The codebook receives no gradient through this path (it trains via the
    codebook loss only).
    """
    if encodings.shape != quantized.shape:
        raise ValueError(
            f"shape mismatch: {tuple(encodings.shape)} vs {tuple(quantized.shape)}"
        )
    return _CopyGradient.apply(encodings, quantized)


class UsageTracker:
    """Accumulates per-entry assignment counts across batches.

    Perplexity is exp of the entropy of the empirical index distribution and
    lies in [1, num_entries]; 1 means total collapse, num_entries means
    perfectly uniform usage.
    """

    def __init__(self, num_entries: int):
        self.num_entries = num_entries
        self.counts = torch.zeros(num_entries, dtype=torch.long)
        self.batches = 0

    def update(self, indices: torch.Tensor) -> None:
        self.counts += torch.bincount(
            indices.reshape(-1), minlength=self.num_entries
        )
        self.batches += 1

    def histogram(self) -> torch.Tensor:
        self._require_history()
        return self.counts.clone()

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def perplexity(self) -> float:
        self._require_history()
        probs = self.counts.double() / self.total
        nonzero = probs[probs > 0]
        entropy = -(nonzero * nonzero.log()).sum()
        return float(entropy.exp())

    def reset(self) -> None:
        self.counts.zero_()
        self.batches = 0

    def _require_history(self) -> None:
        if self.batches == 0:
            raise ValueError("no batches recorded")
