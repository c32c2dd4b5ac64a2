"""Temporal-prediction (InfoNCE), cross-view-consistency, and hybrid losses.

All functions are pure, dtype-generic (float32 for training, float64 for
numeric verification), and differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .models import PredictionHeads

DEFAULT_LAMBDA = 0.002
DEFAULT_BETA = 50.0
DEFAULT_EPS = 1e-9


@dataclass(frozen=True)
class BTConfig:
    """Cross-correlation loss weights: off-diagonal trade-off and norm floor."""

    lam: float = DEFAULT_LAMBDA
    eps: float = DEFAULT_EPS

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class HybridConfig:
    """Weight of the two temporal-prediction terms and the future horizon."""

    beta: float = DEFAULT_BETA
    n_future: int = 9

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if self.n_future < 1:
            raise ValueError(f"n_future must be >= 1, got {self.n_future}")


def cpc_loss(z_future: torch.Tensor, c_t: torch.Tensor, heads: PredictionHeads) -> torch.Tensor:
    """InfoNCE over future windows.

    z_future[k-1] holds every batch sample's embedding of the window at
    offset t+k. For each offset the prediction W_k c_t of sample i must
    outscore the other samples' futures:

        s(i, j, k) = z_future[k-1][j] . (W_k c_t[i])
        loss = -(1/T) sum_k mean_i log softmax_j s(i, ., k)[i]
    """
    if z_future.ndim != 3 or c_t.ndim != 2:
        raise ValueError(
            f"expected z_future [T, B, D] and c_t [B, H], got {tuple(z_future.shape)} "
            f"and {tuple(c_t.shape)}"
        )
    n_future, batch, _ = z_future.shape
    if c_t.shape[0] != batch:
        raise ValueError(f"batch mismatch: z_future has {batch}, c_t has {c_t.shape[0]}")
    if batch < 2:
        raise ValueError(f"need at least 2 batch samples for negatives, got {batch}")
    if n_future > heads.n_future:
        raise ValueError(f"{n_future} future offsets requested, heads cover {heads.n_future}")
    total = z_future.new_zeros(())
    for k in range(1, n_future + 1):
        pred = heads(c_t, k)  # [B, D]
        logits = pred @ z_future[k - 1].T  # [i, j]
        log_probs = torch.log_softmax(logits, dim=1)
        total = total - log_probs.diagonal().mean()
    return total / n_future


def bt_cross_correlation(
    c_a: torch.Tensor, c_b: torch.Tensor, eps: float = DEFAULT_EPS
) -> torch.Tensor:
    """Normalized cross-correlation matrix of two batches of embeddings.

    Columns are mean-centered along the batch before normalization, so each
    entry is a true Pearson-style correlation in [-1, 1] (up to the eps
    floor guarding zero-variance features).
    """
    if c_a.ndim != 2 or c_b.ndim != 2 or c_a.shape != c_b.shape:
        raise ValueError(
            f"expected matching [B, H] inputs, got {tuple(c_a.shape)} and {tuple(c_b.shape)}"
        )
    if c_a.shape[0] < 2:
        raise ValueError(f"need at least 2 batch samples, got {c_a.shape[0]}")
    if eps <= 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    a = c_a - c_a.mean(dim=0)
    b = c_b - c_b.mean(dim=0)
    # vector_norm's subgradient at an all-zero column is 0, so constant
    # (e.g. saturated) features cannot poison the backward pass with 0/0.
    norm_a = torch.linalg.vector_norm(a, dim=0)
    norm_b = torch.linalg.vector_norm(b, dim=0)
    return (a.T @ b) / (norm_a[:, None] * norm_b[None, :] + eps)


def bt_loss(corr: torch.Tensor, lam: float = DEFAULT_LAMBDA) -> torch.Tensor:
    """Invariance plus redundancy-reduction penalty on a correlation matrix.

    sum_i (C_ii - 1)^2 + lam * sum_{i != j} C_ij^2; zero exactly at C = I.
    """
    if corr.ndim != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError(f"expected a square matrix, got {tuple(corr.shape)}")
    diag = corr.diagonal()
    on_diag = ((diag - 1.0) ** 2).sum()
    off_diag = (corr**2).sum() - (diag**2).sum()
    return on_diag + lam * off_diag


def hybrid_loss(
    bt: torch.Tensor | float,
    cpc_a: torch.Tensor | float,
    cpc_b: torch.Tensor | float,
    beta: float = DEFAULT_BETA,
) -> torch.Tensor | float:
    """bt + beta * (cpc_a + cpc_b)."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return bt + beta * (cpc_a + cpc_b)
