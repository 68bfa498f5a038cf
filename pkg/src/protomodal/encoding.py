"""Encoders that turn irregular observations into regular (T, D) embeddings.

The series path combines two views of the same admission: a carry-forward
imputation passed through a 1D convolution, and a learned attention
interpolation whose queries are time embeddings of the reference grid and
whose keys are time embeddings of the observation times. A sigmoid gate mixes
the two views elementwise. The note path reuses the attention interpolation
with note embeddings as values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import AdmissionRecord, VariableSpec


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceGrid:
    """T reference points, evenly spaced over (0, window_hours]."""

    n_points: int
    window_hours: float

    def __post_init__(self) -> None:
        if self.n_points < 4 or self.n_points % 4 != 0:
            raise EncodingError(f"grid size must be >= 4 and divisible by 4, got {self.n_points}")
        if self.window_hours <= 0:
            raise EncodingError("window_hours must be positive")

    def points(self, dtype=torch.float64) -> torch.Tensor:
        step = self.window_hours / self.n_points
        return torch.arange(1, self.n_points + 1, dtype=dtype) * step

    def points_numpy(self) -> np.ndarray:
        step = self.window_hours / self.n_points
        return np.arange(1, self.n_points + 1, dtype=np.float64) * step


# ---------------------------------------------------------------------------
# carry-forward imputation
# ---------------------------------------------------------------------------


def impute_locf(
    record: AdmissionRecord,
    variables: list[VariableSpec],
    grid: ReferenceGrid,
    fill: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Carry the latest preceding observation onto each grid point.

    Returns ``(values, mask)`` of shape (n_variables, T); mask is 1 where a
    preceding observation existed, else the entry is ``fill`` with mask 0.
    Expects a normalized record (all series values are floats).
    """
    points = grid.points_numpy()
    d_m = len(variables)
    values = np.full((d_m, grid.n_points), fill, dtype=np.float64)
    mask = np.zeros((d_m, grid.n_points), dtype=np.float64)
    for j, var in enumerate(variables):
        obs = record.series.get(var.name, [])
        obs = [(t, v) for t, v in obs if t <= record.window_hours]
        if not obs:
            continue
        times = np.asarray([t for t, _ in obs], dtype=np.float64)
        vals = np.asarray([float(v) for _, v in obs], dtype=np.float64)
        idx = np.searchsorted(times, points, side="right") - 1
        has = idx >= 0
        values[j, has] = vals[idx[has]]
        mask[j, has] = 1.0
    return values, mask


# ---------------------------------------------------------------------------
# record tensors and batching
# ---------------------------------------------------------------------------


@dataclass
class RecordTensors:
    """One admission converted to model-ready tensors."""

    id: str
    obs_times: torch.Tensor  # (L,)
    obs_values: torch.Tensor  # (L, d_m), zeros where unobserved
    obs_mask: torch.Tensor  # (L, d_m), 1 where observed
    locf_values: torch.Tensor  # (d_m, T)
    locf_mask: torch.Tensor  # (d_m, T)
    note_times: torch.Tensor  # (N,)
    note_embeddings: torch.Tensor  # (N, E)
    label: torch.Tensor  # () binary or (25,) multilabel


@dataclass
class Batch:
    ids: list[str]
    obs_times: torch.Tensor  # (B, L)
    obs_values: torch.Tensor  # (B, L, d_m)
    obs_mask: torch.Tensor  # (B, L, d_m)
    locf_values: torch.Tensor  # (B, d_m, T)
    locf_mask: torch.Tensor  # (B, d_m, T)
    note_times: torch.Tensor  # (B, N)
    note_embeddings: torch.Tensor  # (B, N, E)
    note_mask: torch.Tensor  # (B, N)
    labels: torch.Tensor  # (B,) or (B, 25)

    def __len__(self) -> int:
        return len(self.ids)


def tensorize_record(
    record: AdmissionRecord,
    variables: list[VariableSpec],
    grid: ReferenceGrid,
    fill: float = 0.0,
    dtype=torch.float64,
) -> RecordTensors:
    """Convert a normalized, note-embedded record into tensors.

    Observations are merged onto a union time axis (one row per distinct
    time); anything past the observation window is dropped.
    """
    by_time: dict[float, dict[int, float]] = {}
    for j, var in enumerate(variables):
        for t, v in record.series.get(var.name, []):
            if t > record.window_hours:
                continue
            if isinstance(v, str):
                raise EncodingError(
                    f"record {record.id!r}: categorical value {v!r} present; normalize first"
                )
            by_time.setdefault(float(t), {})[j] = float(v)
    times = sorted(by_time)
    d_m = len(variables)
    length = max(1, len(times))
    obs_values = torch.zeros((length, d_m), dtype=dtype)
    obs_mask = torch.zeros((length, d_m), dtype=dtype)
    obs_times = torch.zeros((length,), dtype=dtype)
    for i, t in enumerate(times):
        obs_times[i] = t
        for j, v in by_time[t].items():
            obs_values[i, j] = v
            obs_mask[i, j] = 1.0

    locf_values, locf_mask = impute_locf(record, variables, grid, fill=fill)

    if not record.notes:
        raise EncodingError(f"record {record.id!r} has no notes; filter or add a null note")
    n_dim = None
    note_rows = []
    note_times = []
    for note in record.notes:
        if note.embedding is None:
            raise EncodingError(f"record {record.id!r}: note without embedding; embed notes first")
        if n_dim is None:
            n_dim = len(note.embedding)
        note_rows.append(note.embedding)
        note_times.append(note.time)

    if record.labels.task == "binary":
        label = torch.tensor(float(record.labels.binary_label), dtype=dtype)
    else:
        label = torch.tensor([float(v) for v in record.labels.multilabel or []], dtype=dtype)

    return RecordTensors(
        id=record.id,
        obs_times=obs_times,
        obs_values=obs_values,
        obs_mask=obs_mask,
        locf_values=torch.as_tensor(locf_values, dtype=dtype),
        locf_mask=torch.as_tensor(locf_mask, dtype=dtype),
        note_times=torch.tensor(note_times, dtype=dtype),
        note_embeddings=torch.tensor(note_rows, dtype=dtype),
        label=label,
    )


def collate(items: list[RecordTensors]) -> Batch:
    """Pad a list of record tensors into one batch; padding rows have mask 0."""
    if not items:
        raise EncodingError("cannot collate an empty batch")
    dtype = items[0].obs_values.dtype
    b = len(items)
    l_max = max(item.obs_times.shape[0] for item in items)
    n_max = max(item.note_times.shape[0] for item in items)
    d_m = items[0].obs_values.shape[1]
    e_dim = items[0].note_embeddings.shape[1]

    obs_times = torch.zeros((b, l_max), dtype=dtype)
    obs_values = torch.zeros((b, l_max, d_m), dtype=dtype)
    obs_mask = torch.zeros((b, l_max, d_m), dtype=dtype)
    note_times = torch.zeros((b, n_max), dtype=dtype)
    note_embeddings = torch.zeros((b, n_max, e_dim), dtype=dtype)
    note_mask = torch.zeros((b, n_max), dtype=dtype)
    for i, item in enumerate(items):
        l_i = item.obs_times.shape[0]
        obs_times[i, :l_i] = item.obs_times
        obs_values[i, :l_i] = item.obs_values
        obs_mask[i, :l_i] = item.obs_mask
        n_i = item.note_times.shape[0]
        note_times[i, :n_i] = item.note_times
        note_embeddings[i, :n_i] = item.note_embeddings
        note_mask[i, :n_i] = 1.0
    return Batch(
        ids=[item.id for item in items],
        obs_times=obs_times,
        obs_values=obs_values,
        obs_mask=obs_mask,
        locf_values=torch.stack([item.locf_values for item in items]),
        locf_mask=torch.stack([item.locf_mask for item in items]),
        note_times=note_times,
        note_embeddings=note_embeddings,
        note_mask=note_mask,
        labels=torch.stack([item.label for item in items]),
    )


# ---------------------------------------------------------------------------
# learned time embeddings
# ---------------------------------------------------------------------------


class Time2Vec(nn.Module):
    """A bank of time embeddings: one linear plus sinusoidal components each.

    ``forward(t)`` maps times of shape (...,) to (..., n_functions, dim).
    """

    def __init__(self, n_functions: int, dim: int, window_hours: float = 48.0):
        super().__init__()
        if n_functions < 1 or dim < 2:
            raise EncodingError("need at least one function with dim >= 2")
        self.n_functions = n_functions
        self.dim = dim
        self.window_hours = window_hours
        self.linear_weight = nn.Parameter(torch.empty(n_functions))
        self.linear_bias = nn.Parameter(torch.empty(n_functions))
        self.frequency = nn.Parameter(torch.empty(n_functions, dim - 1))
        self.phase = nn.Parameter(torch.empty(n_functions, dim - 1))

    def _init_direct(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            self.linear_weight.fill_(1.0 / self.window_hours)
            self.linear_bias.zero_()
            # Log-spaced periods between W/16 and 2W keep the sinusoids useful
            # over the observation window.
            u = torch.rand(self.frequency.shape, generator=generator, dtype=self.frequency.dtype)
            periods = (self.window_hours / 16.0) * (32.0**u)
            self.frequency.copy_(2.0 * math.pi / periods)
            phase = torch.rand(self.phase.shape, generator=generator, dtype=self.phase.dtype)
            self.phase.copy_(2.0 * math.pi * phase)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        t = t.unsqueeze(-1).unsqueeze(-1)  # (..., 1, 1)
        linear = self.linear_weight * t.squeeze(-1) + self.linear_bias  # (..., V)
        periodic = torch.sin(self.frequency * t + self.phase)  # (..., V, dim-1)
        return torch.cat([linear.unsqueeze(-1), periodic], dim=-1)


class MultiTimeAttention(nn.Module):
    """Attention interpolation of irregular values onto reference points.

    One attention head per time-embedding function. For each head, reference
    points attend over observation times with a per-channel mask, so each
    channel normalizes only over its own observed entries. The per-head
    interpolations are projected, concatenated and mapped to ``out_dim``.
    """

    def __init__(
        self,
        in_channels: int,
        out_dim: int,
        n_heads: int = 8,
        time_dim: int = 16,
        key_dim: int = 16,
        window_hours: float = 48.0,
    ):
        super().__init__()
        self.in_channels = in_channels
        self.out_dim = out_dim
        self.n_heads = n_heads
        self.key_dim = key_dim
        self.time2vec = Time2Vec(n_heads, time_dim, window_hours)
        self.query_proj = nn.Parameter(torch.empty(n_heads, time_dim, key_dim))
        self.key_proj = nn.Parameter(torch.empty(n_heads, time_dim, key_dim))
        self.value_proj = nn.Linear(in_channels, out_dim)
        self.out_proj = nn.Linear(n_heads * out_dim, out_dim)

    def _init_direct(self, generator: torch.Generator | None = None) -> None:
        with torch.no_grad():
            for w in (self.query_proj, self.key_proj):
                bound = math.sqrt(6.0 / (w.shape[1] + w.shape[2]))
                w.uniform_(-bound, bound, generator=generator)

    def _scores(self, query_times: torch.Tensor, key_times: torch.Tensor) -> torch.Tensor:
        # query_times (T,), key_times (B, L) -> (B, V, T, L)
        q = torch.einsum("tvd,vdk->vtk", self.time2vec(query_times), self.query_proj)
        k = torch.einsum("blvd,vdk->bvlk", self.time2vec(key_times), self.key_proj)
        return torch.einsum("vtk,bvlk->bvtl", q, k) / math.sqrt(self.key_dim)

    def attention_weights(
        self, query_times: torch.Tensor, key_times: torch.Tensor, mask: torch.Tensor
    ) -> torch.Tensor:
        """Per-channel attention weights (B, V, T, L, C). For small inputs only."""
        scores = self._scores(query_times, key_times)
        e = torch.exp(scores - scores.amax(dim=-1, keepdim=True))
        weighted = e.unsqueeze(-1) * mask.unsqueeze(1).unsqueeze(2)  # (B,V,T,L,C)
        denom = weighted.sum(dim=3, keepdim=True)
        return weighted / denom.clamp(min=1e-30)

    def forward(
        self,
        query_times: torch.Tensor,
        key_times: torch.Tensor,
        values: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        """Interpolate values (B, L, C) with mask (B, L, C) onto (B, T, out_dim)."""
        if mask.dim() == 2:
            mask = mask.unsqueeze(-1).expand_as(values)
        per_sample = mask.reshape(mask.shape[0], -1).sum(dim=1)
        if (per_sample == 0).any():
            bad = torch.nonzero(per_sample == 0).flatten().tolist()
            raise EncodingError(
                f"samples {bad} have no observations at all; use the imputation path"
            )
        scores = self._scores(query_times, key_times)  # (B, V, T, L)
        e = torch.exp(scores - scores.amax(dim=-1, keepdim=True))
        masked_values = values * mask
        numer = torch.einsum("bvtl,blc->bvtc", e, masked_values)
        denom = torch.einsum("bvtl,blc->bvtc", e, mask)
        interp = numer / denom.clamp(min=1e-30)
        head_out = self.value_proj(interp)  # (B, V, T, out_dim)
        b, v, t, d = head_out.shape
        stacked = head_out.permute(0, 2, 1, 3).reshape(b, t, v * d)
        return self.out_proj(stacked)


class GatedFusion(nn.Module):
    """Elementwise sigmoid gate mixing the imputed and interpolated views."""

    def __init__(self, dim: int, hidden: int | None = None):
        super().__init__()
        hidden = hidden or dim
        self.mlp = nn.Sequential(
            nn.Linear(2 * dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, dim),
        )

    def gate(self, e_imp: torch.Tensor, e_attn: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.mlp(torch.cat([e_imp, e_attn], dim=-1)))

    def forward(self, e_imp: torch.Tensor, e_attn: torch.Tensor) -> torch.Tensor:
        g = self.gate(e_imp, e_attn)
        return g * e_imp + (1.0 - g) * e_attn


class TimeSeriesEncoder(nn.Module):
    """Irregular series -> (B, T, D): gated mix of conv-imputed and attention views."""

    def __init__(
        self,
        n_variables: int,
        d_model: int,
        n_heads: int = 8,
        time_dim: int = 16,
        key_dim: int = 16,
        window_hours: float = 48.0,
    ):
        super().__init__()
        self.conv = nn.Conv1d(n_variables, d_model, kernel_size=3, padding=1)
        self.attention = MultiTimeAttention(
            n_variables, d_model, n_heads, time_dim, key_dim, window_hours
        )
        self.gate = GatedFusion(d_model)

    def conv_embed(self, imputed: torch.Tensor) -> torch.Tensor:
        """(B, d_m, T) -> (B, T, D) via a kernel-3 same-padding convolution."""
        return self.conv(imputed).transpose(1, 2)

    def forward(self, batch: Batch, grid_points: torch.Tensor) -> torch.Tensor:
        e_imp = self.conv_embed(batch.locf_values)
        e_attn = self.attention(grid_points, batch.obs_times, batch.obs_values, batch.obs_mask)
        return self.gate(e_imp, e_attn)


class NoteEncoder(nn.Module):
    """Timed note embeddings -> (B, T, D) via attention interpolation."""

    def __init__(
        self,
        note_dim: int,
        d_model: int,
        n_heads: int = 8,
        time_dim: int = 16,
        key_dim: int = 16,
        window_hours: float = 48.0,
    ):
        super().__init__()
        self.attention = MultiTimeAttention(
            note_dim, d_model, n_heads, time_dim, key_dim, window_hours
        )

    def forward(self, batch: Batch, grid_points: torch.Tensor) -> torch.Tensor:
        if (batch.note_mask.sum(dim=1) == 0).any():
            bad = torch.nonzero(batch.note_mask.sum(dim=1) == 0).flatten().tolist()
            raise EncodingError(f"samples {bad} have zero notes; filter such admissions")
        return self.attention(
            grid_points, batch.note_times, batch.note_embeddings, batch.note_mask
        )
