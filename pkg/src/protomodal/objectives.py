"""Training objectives beyond the prediction loss.

The contrastive term pulls the two refined prototype banks of the same
admission together and pushes banks from different admissions apart, using an
importance-weighted per-prototype cosine similarity. Two transformer decoders
reconstruct the imputed regular series and the note-path embeddings from the
prototypes so the banks keep modality-specific information.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .transformer import TransformerDecoder


class ObjectiveError(ValueError):
    pass


class PrototypeImportance(nn.Module):
    """Simplex weights over the K prototypes from a pair of global embeddings.

    The MLP score is averaged over both concatenation orders so the weights
    are symmetric in the two modalities; that keeps the bidirectional
    contrastive loss exactly invariant under swapping the modality batches.
    """

    def __init__(self, d_model: int, n_prototypes: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or d_model
        self.mlp = nn.Sequential(
            nn.Linear(2 * d_model, hidden),
            nn.Tanh(),
            nn.Linear(hidden, n_prototypes),
        )

    def scores(self, g_a: torch.Tensor, g_b: torch.Tensor) -> torch.Tensor:
        ab = self.mlp(torch.cat([g_a, g_b], dim=-1))
        ba = self.mlp(torch.cat([g_b, g_a], dim=-1))
        return 0.5 * (ab + ba)

    def forward(self, g_a: torch.Tensor, g_b: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.scores(g_a, g_b), dim=-1)

    def pairwise(self, g_a: torch.Tensor, g_b: torch.Tensor) -> torch.Tensor:
        """(B, D), (B, D) -> (B, B, K): weights for every (anchor, candidate) pair."""
        b = g_a.shape[0]
        a_grid = g_a.unsqueeze(1).expand(b, b, -1)
        b_grid = g_b.unsqueeze(0).expand(b, b, -1)
        return self.forward(a_grid, b_grid)


def _row_normalize(p: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return p / (p.norm(dim=-1, keepdim=True) + eps)


def pair_similarity(p_a: torch.Tensor, p_b: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Importance-weighted sum of per-prototype cosine similarities.

    ``p_a``/``p_b`` are (..., K, D) banks, ``beta`` (..., K) weights; norms
    are guarded with 1e-12 so zero rows yield cosine 0.
    """
    cos = (_row_normalize(p_a) * _row_normalize(p_b)).sum(dim=-1)  # (..., K)
    return (beta * cos).sum(dim=-1)


class CrossModalNCE(nn.Module):
    """Bidirectional noise-contrastive alignment of per-admission prototype banks.

    With batch matrix S[i, j] = sim(series bank i, text bank j), the loss is
    the mean of the row-wise and column-wise cross-entropies against the
    diagonal, scaled by a temperature. Reduction "mean" divides by the batch
    size; "sum" keeps the literal sum over anchors.
    """

    def __init__(self, importance: PrototypeImportance, temperature: float = 0.1,
                 reduction: str = "mean"):
        super().__init__()
        if temperature <= 0:
            raise ObjectiveError("temperature must be positive")
        if reduction not in ("mean", "sum"):
            raise ObjectiveError(f"unknown reduction {reduction!r}")
        self.importance = importance
        self.temperature = temperature
        self.reduction = reduction

    def similarity_matrix(
        self,
        p_series: torch.Tensor,
        p_text: torch.Tensor,
        g_series: torch.Tensor,
        g_text: torch.Tensor,
    ) -> torch.Tensor:
        beta = self.importance.pairwise(g_series, g_text)  # (B, B, K)
        cos = torch.einsum("ikd,jkd->ijk", _row_normalize(p_series), _row_normalize(p_text))
        return (beta * cos).sum(dim=-1)  # (B, B)

    def forward(self, p_series, p_text, g_series, g_text) -> torch.Tensor:
        sim = self.similarity_matrix(p_series, p_text, g_series, g_text) / self.temperature
        diag = torch.diagonal(sim)
        series_to_text = -(diag - torch.logsumexp(sim, dim=1)).sum()
        text_to_series = -(diag - torch.logsumexp(sim, dim=0)).sum()
        loss = 0.5 * (series_to_text + text_to_series)
        if self.reduction == "mean":
            loss = loss / sim.shape[0]
        return loss


class PrototypeDecoder(nn.Module):
    """Transformer decoder from a prototype bank back to a (T, out) sequence.

    T learned positional queries self-attend and cross-attend to the K
    prototypes over ``n_layers`` pre-norm layers, then a linear head maps each
    position to the output channels.
    """

    def __init__(
        self,
        d_model: int,
        n_queries: int,
        out_channels: int,
        n_layers: int = 2,
        n_heads: int = 4,
        ffn_dim: int | None = None,
    ):
        super().__init__()
        self.queries = nn.Parameter(torch.empty(n_queries, d_model))
        self.decoder = TransformerDecoder(d_model, n_layers, n_heads, ffn_dim or d_model)
        self.head = nn.Linear(d_model, out_channels)

    def _init_direct(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.queries.normal_(0.0, 0.02, generator=generator)

    def forward(self, prototypes: torch.Tensor) -> torch.Tensor:
        """(B, K, D) -> (B, n_queries, out_channels)."""
        b = prototypes.shape[0]
        tgt = self.queries.unsqueeze(0).expand(b, -1, -1)
        decoded = self.decoder(tgt, prototypes)
        return self.head(decoded)


def reconstruction_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """MSE over every entry; the target is treated as a constant."""
    return torch.mean((prediction - target.detach()) ** 2)


@dataclass
class LossBundle:
    """All objective components and their weighted total."""

    pred: torch.Tensor
    contrast: torch.Tensor
    recon_series: torch.Tensor
    recon_text: torch.Tensor
    recon: torch.Tensor
    total: torch.Tensor
    lambda_contrast: float
    lambda_recon: float

    def detached(self) -> dict[str, float]:
        return {
            "pred": float(self.pred.detach()),
            "contrast": float(self.contrast.detach()),
            "recon_series": float(self.recon_series.detach()),
            "recon_text": float(self.recon_text.detach()),
            "recon": float(self.recon.detach()),
            "total": float(self.total.detach()),
        }


def total_loss(
    pred: torch.Tensor,
    contrast: torch.Tensor,
    recon_series: torch.Tensor,
    recon_text: torch.Tensor,
    lambda_contrast: float,
    lambda_recon: float,
) -> LossBundle:
    """Weighted sum: pred + l1 * contrast + l2 * (recon_series + recon_text) / 2."""
    for name, value in (
        ("pred", pred),
        ("contrast", contrast),
        ("recon_series", recon_series),
        ("recon_text", recon_text),
    ):
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise ObjectiveError(f"non-finite loss component {name!r}: {value}")
    pred = torch.as_tensor(pred)
    contrast = torch.as_tensor(contrast, dtype=pred.dtype)
    recon_series = torch.as_tensor(recon_series, dtype=pred.dtype)
    recon_text = torch.as_tensor(recon_text, dtype=pred.dtype)
    recon = 0.5 * (recon_series + recon_text)
    total = pred + lambda_contrast * contrast + lambda_recon * recon
    return LossBundle(
        pred=pred,
        contrast=contrast,
        recon_series=recon_series,
        recon_text=recon_text,
        recon=recon,
        total=total,
        lambda_contrast=lambda_contrast,
        lambda_recon=lambda_recon,
    )
