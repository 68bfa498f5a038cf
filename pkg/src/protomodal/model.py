"""The full network: encoders, pattern discovery, objectives and fusion."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
from torch import nn

from .discovery import MultiScaleEncoder, PatternDiscovery
from .encoding import Batch, NoteEncoder, ReferenceGrid, TimeSeriesEncoder
from .fusion import (
    GROUP_SERIES_PROTO,
    GROUP_SERIES_TIME,
    GROUP_TEXT_PROTO,
    GROUP_TEXT_TIME,
    ModalitySummary,
    PredictionHead,
    TokenFusion,
    prediction_loss,
)
from .objectives import (
    CrossModalNCE,
    LossBundle,
    PrototypeDecoder,
    PrototypeImportance,
    reconstruction_loss,
    total_loss,
)


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    """Architecture hyperparameters plus the ablation switches."""

    n_variables: int = 17
    note_dim: int = 128
    d_model: int = 128
    k_prototypes: int = 16
    time2vec_functions: int = 8  # interpolation heads, one per time embedding
    time_dim: int = 16
    key_dim: int = 16
    temperature: float = 0.1
    nce_reduction: str = "mean"
    slot_iterations: int = 3
    fusion_layers: int = 2
    fusion_heads: int = 4
    decoder_layers: int = 2
    decoder_heads: int = 4
    task: str = "binary"  # "binary" | "multilabel"
    n_labels: int = 25  # multilabel width
    grid_points: int = 24
    window_hours: float = 48.0
    pos_weight: float | None = None
    use_prototypes: bool = True
    use_timestamp_tokens: bool = True
    use_multiscale: bool = True
    use_contrastive: bool = True
    use_reconstruction: bool = True

    def __post_init__(self) -> None:
        if self.task not in ("binary", "multilabel"):
            raise ModelError(f"unknown task {self.task!r}")
        if not self.use_prototypes and not self.use_timestamp_tokens:
            raise ModelError("cannot disable both prototype and timestamp tokens")

    @property
    def out_dim(self) -> int:
        return 1 if self.task == "binary" else self.n_labels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class ModelOutput:
    logits: torch.Tensor  # (B, 1) or (B, 25)
    series_tokens: torch.Tensor  # (B, L_series, D), position-encoded
    text_embedding: torch.Tensor  # (B, T, D)
    g_series: torch.Tensor  # (B, D)
    g_text: torch.Tensor  # (B, D)
    series_prototypes: torch.Tensor | None = None  # (B, K, D)
    text_prototypes: torch.Tensor | None = None  # (B, K, D)
    series_weights: torch.Tensor | None = None  # (B, K, L_series)
    text_weights: torch.Tensor | None = None  # (B, K, T)
    fused: dict = field(default_factory=dict)


class ProtoModal(nn.Module):
    """Prototype-guided cross-modal network over irregular clinical sequences."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.grid = ReferenceGrid(config.grid_points, config.window_hours)
        self.register_buffer("grid_times", self.grid.points(torch.float32), persistent=False)
        self.series_encoder = TimeSeriesEncoder(
            config.n_variables,
            config.d_model,
            config.time2vec_functions,
            config.time_dim,
            config.key_dim,
            config.window_hours,
        )
        self.note_encoder = NoteEncoder(
            config.note_dim,
            config.d_model,
            config.time2vec_functions,
            config.time_dim,
            config.key_dim,
            config.window_hours,
        )
        self.multiscale = MultiScaleEncoder(config.d_model, use_scales=config.use_multiscale)
        if config.use_prototypes:
            self.discovery = PatternDiscovery(
                config.k_prototypes, config.d_model, config.slot_iterations
            )
            self.importance = PrototypeImportance(config.d_model, config.k_prototypes)
            self.contrastive = CrossModalNCE(
                self.importance, config.temperature, config.nce_reduction
            )
            self.series_decoder = PrototypeDecoder(
                config.d_model,
                config.grid_points,
                config.n_variables,
                config.decoder_layers,
                config.decoder_heads,
            )
            self.text_decoder = PrototypeDecoder(
                config.d_model,
                config.grid_points,
                config.d_model,
                config.decoder_layers,
                config.decoder_heads,
            )
        self.fusion = TokenFusion(config.d_model, config.fusion_layers, config.fusion_heads)
        self.series_summary = ModalitySummary(config.d_model)
        self.text_summary = ModalitySummary(config.d_model)
        self.head = PredictionHead(config.d_model, config.out_dim)

    def _cast_batch(self, batch: Batch) -> Batch:
        dtype = self.grid_times.dtype
        if batch.obs_values.dtype == dtype:
            return batch
        return Batch(
            ids=batch.ids,
            obs_times=batch.obs_times.to(dtype),
            obs_values=batch.obs_values.to(dtype),
            obs_mask=batch.obs_mask.to(dtype),
            locf_values=batch.locf_values.to(dtype),
            locf_mask=batch.locf_mask.to(dtype),
            note_times=batch.note_times.to(dtype),
            note_embeddings=batch.note_embeddings.to(dtype),
            note_mask=batch.note_mask.to(dtype),
            labels=batch.labels.to(dtype),
        )

    def forward(
        self, batch: Batch, train: bool = False, generator: torch.Generator | None = None
    ) -> ModelOutput:
        cfg = self.config
        batch = self._cast_batch(batch)
        grid_times = self.grid_times
        z_series = self.series_encoder(batch, grid_times)  # (B, T, D)
        z_text = self.note_encoder(batch, grid_times)  # (B, T, D)
        for name, z in (("series", z_series), ("text", z_text)):
            if not torch.isfinite(z).all():
                raise ModelError(f"non-finite {name} embedding")
        series_tokens = self.multiscale(z_series)  # (B, 1.75T or T, D)
        g_series = series_tokens.mean(dim=1)
        g_text = z_text.mean(dim=1)

        output = ModelOutput(
            logits=torch.empty(0),
            series_tokens=series_tokens,
            text_embedding=z_text,
            g_series=g_series,
            g_text=g_text,
        )

        groups: dict[str, torch.Tensor] = {}
        if cfg.use_prototypes:
            disc = self.discovery(series_tokens, z_text, train=train, generator=generator)
            output.series_prototypes = disc.series_prototypes
            output.text_prototypes = disc.text_prototypes
            output.series_weights = disc.series_weights
            output.text_weights = disc.text_weights
            groups[GROUP_SERIES_PROTO] = disc.series_prototypes
            groups[GROUP_TEXT_PROTO] = disc.text_prototypes
        if cfg.use_timestamp_tokens:
            groups[GROUP_SERIES_TIME] = series_tokens
            groups[GROUP_TEXT_TIME] = z_text

        fused = self.fusion(groups)
        output.fused = fused
        f_series = self.series_summary(
            fused.get(GROUP_SERIES_PROTO), fused.get(GROUP_SERIES_TIME)
        )
        f_text = self.text_summary(fused.get(GROUP_TEXT_PROTO), fused.get(GROUP_TEXT_TIME))
        output.logits = self.head(f_series, f_text)
        return output

    def losses(
        self, batch: Batch, output: ModelOutput, lambda_contrast: float, lambda_recon: float
    ) -> LossBundle:
        cfg = self.config
        labels = batch.labels
        pred = prediction_loss(output.logits, labels, cfg.task, cfg.pos_weight)
        zero = torch.zeros((), dtype=pred.dtype, device=pred.device)
        contrast = zero
        recon_series = zero
        recon_text = zero
        if cfg.use_prototypes and output.series_prototypes is not None:
            if cfg.use_contrastive:
                contrast = self.contrastive(
                    output.series_prototypes,
                    output.text_prototypes,
                    output.g_series,
                    output.g_text,
                )
            if cfg.use_reconstruction:
                decoded_series = self.series_decoder(output.series_prototypes)  # (B, T, d_m)
                recon_series = reconstruction_loss(
                    decoded_series.transpose(1, 2), batch.locf_values
                )
                decoded_text = self.text_decoder(output.text_prototypes)  # (B, T, D)
                recon_text = reconstruction_loss(decoded_text, output.text_embedding)
        return total_loss(pred, contrast, recon_series, recon_text, lambda_contrast, lambda_recon)


# ---------------------------------------------------------------------------
# deterministic initialization
# ---------------------------------------------------------------------------


def _fan(tensor: torch.Tensor) -> tuple[int, int]:
    if tensor.dim() == 2:
        return tensor.shape[1], tensor.shape[0]
    receptive = int(torch.tensor(tensor.shape[2:]).prod()) if tensor.dim() > 2 else 1
    return tensor.shape[1] * receptive, tensor.shape[0] * receptive


def _xavier_uniform(tensor: torch.Tensor, generator: torch.Generator | None) -> None:
    fan_in, fan_out = _fan(tensor)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    tensor.uniform_(-bound, bound, generator=generator)


@torch.no_grad()
def init_parameters(model: nn.Module, generator: torch.Generator | None = None) -> None:
    """Re-initialize every parameter from an explicit generator.

    Traversal order of ``named_modules`` is the module insertion order, so the
    same seed always produces the same parameters. Raises if any parameter is
    left untouched (a guard against new module types slipping through).
    """
    touched: set[int] = set()

    def mark(module: nn.Module) -> None:
        for p in module.parameters(recurse=False):
            touched.add(id(p))

    for _, module in model.named_modules():
        if isinstance(module, nn.Linear):
            _xavier_uniform(module.weight, generator)
            if module.bias is not None:
                module.bias.zero_()
            mark(module)
        elif isinstance(module, nn.Conv1d):
            _xavier_uniform(module.weight, generator)
            if module.bias is not None:
                module.bias.zero_()
            mark(module)
        elif isinstance(module, nn.GRUCell):
            bound = 1.0 / math.sqrt(module.hidden_size)
            module.weight_ih.uniform_(-bound, bound, generator=generator)
            module.weight_hh.uniform_(-bound, bound, generator=generator)
            if module.bias:
                module.bias_ih.zero_()
                module.bias_hh.zero_()
            mark(module)
        elif isinstance(module, nn.LayerNorm):
            if module.elementwise_affine:
                module.weight.fill_(1.0)
                module.bias.zero_()
            mark(module)
        elif hasattr(module, "_init_direct"):
            module._init_direct(generator)
            mark(module)

    missed = [n for n, p in model.named_parameters() if id(p) not in touched]
    if missed:
        raise ModelError(f"parameters not covered by init: {missed}")


def build_model(config: ModelConfig, seed: int = 0, dtype: torch.dtype = torch.float64) -> ProtoModal:
    """Construct and deterministically initialize the network."""
    model = ProtoModal(config).to(dtype)
    generator = torch.Generator()
    generator.manual_seed(seed)
    init_parameters(model, generator)
    return model
