"""Cross-modal token fusion, per-group attention pooling and the task head."""

from __future__ import annotations

import torch
from torch import nn

from .transformer import TransformerEncoder


class FusionError(ValueError):
    pass


# Token groups, in fusion order.
GROUP_SERIES_PROTO = "series_proto"
GROUP_SERIES_TIME = "series_time"
GROUP_TEXT_PROTO = "text_proto"
GROUP_TEXT_TIME = "text_time"
GROUPS = (GROUP_SERIES_PROTO, GROUP_SERIES_TIME, GROUP_TEXT_PROTO, GROUP_TEXT_TIME)


class TokenFusion(nn.Module):
    """Adds token-type embeddings, then full self-attention over all groups."""

    def __init__(self, d_model: int, n_layers: int = 2, n_heads: int = 4):
        super().__init__()
        self.d_model = d_model
        self.type_embeddings = nn.Parameter(torch.empty(len(GROUPS), d_model))
        self.encoder = TransformerEncoder(d_model, n_layers, n_heads, 4 * d_model)

    def _init_direct(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.type_embeddings.normal_(0.0, 0.02, generator=generator)

    def forward(self, groups: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
        """Map {group: (B, n_i, D)} to contextualized tokens, same keys and counts."""
        if not groups:
            raise FusionError("at least one token group is required")
        pieces = []
        sizes = []
        names = [g for g in GROUPS if g in groups]
        for name in names:
            tokens = groups[name]
            if tokens.shape[-1] != self.d_model:
                raise FusionError(
                    f"group {name!r} has width {tokens.shape[-1]}, expected {self.d_model}"
                )
            pieces.append(tokens + self.type_embeddings[GROUPS.index(name)])
            sizes.append(tokens.shape[1])
        stacked = torch.cat(pieces, dim=1)
        encoded = self.encoder(stacked)
        out = {}
        offset = 0
        for name, size in zip(names, sizes):
            out[name] = encoded[:, offset : offset + size]
            offset += size
        return out


class AttentionPool(nn.Module):
    """Additive-attention pooling of a token group to one vector."""

    def __init__(self, d_model: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or d_model
        # No bias on the scorer output: a constant shift cancels in the softmax.
        self.score = nn.Sequential(
            nn.Linear(d_model, hidden),
            nn.Tanh(),
            nn.Linear(hidden, 1, bias=False),
        )

    def weights(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.shape[1] == 0:
            raise FusionError("cannot pool an empty token group")
        return torch.softmax(self.score(tokens).squeeze(-1), dim=-1)  # (B, n)

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        w = self.weights(tokens)
        return torch.einsum("bn,bnd->bd", w, tokens)


class ModalitySummary(nn.Module):
    """Per-modality summary: prototype-group pool plus timestamp-group pool."""

    def __init__(self, d_model: int):
        super().__init__()
        self.proto_pool = AttentionPool(d_model)
        self.time_pool = AttentionPool(d_model)

    def forward(
        self, proto_tokens: torch.Tensor | None, time_tokens: torch.Tensor | None
    ) -> torch.Tensor:
        if proto_tokens is None and time_tokens is None:
            raise FusionError("modality summary needs at least one token group")
        parts = []
        if proto_tokens is not None:
            parts.append(self.proto_pool(proto_tokens))
        if time_tokens is not None:
            parts.append(self.time_pool(time_tokens))
        return sum(parts)


class PredictionHead(nn.Module):
    """Two-layer MLP on the concatenated modality summaries."""

    def __init__(self, d_model: int, out_dim: int):
        super().__init__()
        self.mlp = nn.Sequential(
            nn.Linear(2 * d_model, d_model),
            nn.GELU(),
            nn.Linear(d_model, out_dim),
        )

    def forward(self, f_series: torch.Tensor, f_text: torch.Tensor) -> torch.Tensor:
        return self.mlp(torch.cat([f_series, f_text], dim=-1))


def prediction_loss(logits: torch.Tensor, labels: torch.Tensor, task: str,
                    pos_weight: float | None = None) -> torch.Tensor:
    """Logistic cross-entropy: one logit for binary, mean over 25 for multilabel."""
    values = labels.detach()
    if not torch.isin(values, torch.tensor([0.0, 1.0], dtype=values.dtype)).all():
        raise FusionError("labels must be 0 or 1")
    weight = None
    if pos_weight is not None:
        weight = torch.tensor(pos_weight, dtype=logits.dtype)
    if task == "binary":
        return nn.functional.binary_cross_entropy_with_logits(
            logits.squeeze(-1), labels, pos_weight=weight
        )
    if task == "multilabel":
        return nn.functional.binary_cross_entropy_with_logits(logits, labels, pos_weight=weight)
    raise FusionError(f"unknown task {task!r}")
