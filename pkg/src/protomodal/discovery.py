"""Multi-scale temporal tokens and shared-prototype slot attention.

A bank of K prototype vectors (mean/scale parameters) is sampled once per
forward pass during training and fixed to its mean at evaluation. The same
initial sample and the same attention machinery refine the prototypes
independently against the series tokens and the note tokens, yielding one
refined bank per modality plus the final assignment weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn


class DiscoveryError(ValueError):
    pass


def sinusoidal_position_encoding(length: int, dim: int, dtype=torch.float64) -> torch.Tensor:
    """Standard fixed sin/cos position table of shape (length, dim)."""
    position = torch.arange(length, dtype=dtype).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=dtype)
    args = position * torch.exp(-math.log(10000.0) * idx / dim)
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(args)
    pe[:, 1::2] = torch.cos(args[:, : dim // 2])
    return pe


class MultiScaleEncoder(nn.Module):
    """Three conv blocks with mean-pool windows (1, 2, 4) over the time axis.

    Output length is T + T/2 + T/4 = 1.75T, with position encodings added over
    the concatenated token axis. With scales disabled the input tokens just
    get position encodings (used by the single-scale ablation).
    """

    WINDOWS = (1, 2, 4)

    def __init__(self, d_model: int, use_scales: bool = True):
        super().__init__()
        self.d_model = d_model
        self.use_scales = use_scales
        self.convs = nn.ModuleList(
            nn.Conv1d(d_model, d_model, kernel_size=3, padding=1) for _ in self.WINDOWS
        )

    def output_length(self, t: int) -> int:
        if not self.use_scales:
            return t
        return t + t // 2 + t // 4

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        b, t, d = z.shape
        if t % 4 != 0:
            raise DiscoveryError(f"time length {t} must be divisible by 4")
        if not self.use_scales:
            pe = sinusoidal_position_encoding(t, d, dtype=z.dtype)
            return z + pe
        pieces = []
        x = z.transpose(1, 2)  # (B, D, T)
        for conv, window in zip(self.convs, self.WINDOWS):
            h = conv(x)
            if window > 1:
                h = torch.nn.functional.avg_pool1d(h, kernel_size=window, stride=window)
            pieces.append(h.transpose(1, 2))
        tokens = torch.cat(pieces, dim=1)  # (B, 1.75T, D)
        pe = sinusoidal_position_encoding(tokens.shape[1], d, dtype=z.dtype)
        return tokens + pe


class PrototypeBank(nn.Module):
    """K learnable prototype distributions: mean (K, D) and positive scale (K, D)."""

    def __init__(self, n_prototypes: int, d_model: int):
        super().__init__()
        if n_prototypes < 2:
            raise DiscoveryError("need at least 2 prototypes")
        self.n_prototypes = n_prototypes
        self.d_model = d_model
        self.mean = nn.Parameter(torch.empty(n_prototypes, d_model))
        self.scale_raw = nn.Parameter(torch.empty(n_prototypes, d_model))

    def _init_direct(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.mean.normal_(0.0, 1.0 / math.sqrt(self.d_model), generator=generator)
            self.set_scale(0.5)

    @property
    def scale(self) -> torch.Tensor:
        return torch.nn.functional.softplus(self.scale_raw)

    def set_scale(self, value: float) -> None:
        """Set every scale entry to ``value`` via the inverse softplus."""
        if value <= 0:
            raise DiscoveryError("scale must be positive")
        raw = math.log(math.expm1(value)) if value < 20 else value
        with torch.no_grad():
            self.scale_raw.fill_(raw)

    def sample(self, train: bool, generator: torch.Generator | None = None) -> torch.Tensor:
        """Initial prototypes: mean + scale * eps in train mode, mean at eval."""
        if not train:
            return self.mean
        eps = torch.randn(
            self.mean.shape, generator=generator, dtype=self.mean.dtype, device=self.mean.device
        )
        return self.mean + self.scale * eps


class SlotAttention(nn.Module):
    """Iterative prototype refinement against a token sequence.

    Each iteration computes assignment weights with dot-product attention
    normalized over the tokens, aggregates values with a weighted mean, and
    refines the prototypes through a recurrent cell followed by a residual MLP.
    """

    def __init__(self, d_model: int, n_iterations: int = 3, mlp_hidden: int | None = None):
        super().__init__()
        if n_iterations < 1:
            raise DiscoveryError("need at least one iteration")
        self.d_model = d_model
        self.n_iterations = n_iterations
        self.query_proj = nn.Linear(d_model, d_model, bias=False)
        self.key_proj = nn.Linear(d_model, d_model, bias=False)
        self.value_proj = nn.Linear(d_model, d_model, bias=False)
        hidden = mlp_hidden or d_model
        self.cell = nn.GRUCell(d_model, d_model)
        self.mlp = nn.Sequential(nn.Linear(d_model, hidden), nn.Tanh(), nn.Linear(hidden, d_model))

    def forward(
        self, init_prototypes: torch.Tensor, inputs: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, K, D), (B, L, D) -> refined (B, K, D) and final weights (B, K, L)."""
        b, k, d = init_prototypes.shape
        keys = self.key_proj(inputs)
        values = self.value_proj(inputs)
        prototypes = init_prototypes
        weights = None
        for _ in range(self.n_iterations):
            queries = self.query_proj(prototypes)
            logits = torch.einsum("bkd,bld->bkl", queries, keys) / math.sqrt(d)
            weights = torch.softmax(logits, dim=-1)
            updated = torch.einsum("bkl,bld->bkd", weights, values)
            h = self.cell(updated.reshape(b * k, d), prototypes.reshape(b * k, d))
            h = h.reshape(b, k, d)
            prototypes = h + self.mlp(h)
        return prototypes, weights


@dataclass
class DiscoveryOutput:
    series_prototypes: torch.Tensor  # (B, K, D)
    text_prototypes: torch.Tensor  # (B, K, D)
    series_weights: torch.Tensor  # (B, K, L_series)
    text_weights: torch.Tensor  # (B, K, T)


class PatternDiscovery(nn.Module):
    """Shared-bank slot attention applied independently to each modality."""

    def __init__(self, n_prototypes: int, d_model: int, n_iterations: int = 3):
        super().__init__()
        self.bank = PrototypeBank(n_prototypes, d_model)
        self.slots = SlotAttention(d_model, n_iterations)

    def forward(
        self,
        series_tokens: torch.Tensor,
        text_tokens: torch.Tensor,
        train: bool = False,
        generator: torch.Generator | None = None,
    ) -> DiscoveryOutput:
        b = series_tokens.shape[0]
        init = self.bank.sample(train=train, generator=generator)
        init = init.unsqueeze(0).expand(b, -1, -1)
        p_series, w_series = self.slots(init, series_tokens)
        p_text, w_text = self.slots(init, text_tokens)
        return DiscoveryOutput(p_series, p_text, w_series, w_text)
