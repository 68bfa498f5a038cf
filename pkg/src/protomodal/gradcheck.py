"""Central-difference verification of every differentiable component.

Each registered component builds a small 64-bit instance with fixed random
inputs and a scalar-valued closure. The harness compares autograd gradients
against central finite differences on a random subsample of parameter
coordinates; relative error is |analytic - numeric| / max(1e-8, |analytic| +
|numeric|).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .discovery import MultiScaleEncoder, PatternDiscovery
from .encoding import GatedFusion, MultiTimeAttention
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
from .model import ModelConfig, build_model
from .objectives import CrossModalNCE, PrototypeDecoder, PrototypeImportance

DTYPE = torch.float64


class GradCheckError(RuntimeError):
    def __init__(self, message: str, failures: list[tuple[str, int, float]]):
        super().__init__(message)
        self.failures = failures


@dataclass
class GradCheckReport:
    component: str
    n_coordinates: int
    max_rel_error: float
    mean_rel_error: float
    worst: tuple[str, int, float]  # parameter name, flat index, error

    @property
    def ok(self) -> bool:
        return self.max_rel_error <= 1e-4


def _gen(seed: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(seed)
    return g

def _randn(shape, gen, scale=1.0):
    return scale * torch.randn(*shape, generator=gen, dtype=DTYPE)


def _weighted_sum(output: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    # A fixed random projection keeps every output coordinate in play.
    return (output * _randn(output.shape, gen)).sum()


def _build_gate(seed: int):
    gen = _gen(seed)
    module = GatedFusion(8).to(DTYPE)
    _init(module, gen)
    e_imp = _randn((2, 4, 8), gen)
    e_attn = _randn((2, 4, 8), gen)
    probe = _randn((2, 4, 8), _gen(seed + 1))

    def closure():
        return (module(e_imp, e_attn) * probe).sum()

    return module, closure


def _build_series_interpolation(seed: int):
    gen = _gen(seed)
    module = MultiTimeAttention(3, 6, n_heads=2, time_dim=5, key_dim=4, window_hours=8.0).to(DTYPE)
    _init(module, gen)
    query_times = torch.tensor([1.0, 3.0, 5.0, 7.0], dtype=DTYPE)
    key_times = torch.rand(2, 6, generator=gen, dtype=DTYPE) * 8.0
    values = _randn((2, 6, 3), gen)
    mask = (torch.rand(2, 6, 3, generator=gen, dtype=DTYPE) < 0.7).to(DTYPE)
    mask[:, 0, :] = 1.0  # every channel observed at least once
    probe = _randn((2, 4, 6), _gen(seed + 1))

    def closure():
        return (module(query_times, key_times, values * mask, mask) * probe).sum()

    return module, closure


def _build_note_interpolation(seed: int):
    gen = _gen(seed)
    module = MultiTimeAttention(5, 6, n_heads=2, time_dim=5, key_dim=4, window_hours=8.0).to(DTYPE)
    _init(module, gen)
    query_times = torch.tensor([2.0, 4.0, 6.0, 8.0], dtype=DTYPE)
    key_times = torch.rand(2, 3, generator=gen, dtype=DTYPE) * 8.0
    values = _randn((2, 3, 5), gen)
    mask = torch.ones(2, 3, dtype=DTYPE)
    probe = _randn((2, 4, 6), _gen(seed + 1))

    def closure():
        return (module(query_times, key_times, values, mask) * probe).sum()

    return module, closure


def _build_multiscale(seed: int):
    gen = _gen(seed)
    module = MultiScaleEncoder(8).to(DTYPE)
    _init(module, gen)
    z = _randn((2, 8, 8), gen)
    probe = _randn((2, 14, 8), _gen(seed + 1))

    def closure():
        return (module(z) * probe).sum()

    return module, closure


def _build_slot_attention(seed: int):
    gen = _gen(seed)
    module = PatternDiscovery(3, 8, n_iterations=3).to(DTYPE)
    _init(module, gen)
    series_tokens = _randn((2, 7, 8), gen)
    text_tokens = _randn((2, 4, 8), gen)
    probe_a = _randn((2, 3, 8), _gen(seed + 1))
    probe_b = _randn((2, 3, 8), _gen(seed + 2))

    def closure():
        out = module(series_tokens, text_tokens, train=True, generator=_gen(seed + 3))
        return (out.series_prototypes * probe_a).sum() + (out.text_prototypes * probe_b).sum()

    return module, closure


def _build_importance(seed: int):
    gen = _gen(seed)
    module = PrototypeImportance(8, 5, hidden=16).to(DTYPE)
    _init(module, gen)
    g_a = _randn((3, 8), gen)
    g_b = _randn((3, 8), gen)
    probe = _randn((3, 5), _gen(seed + 1))

    def closure():
        return (module(g_a, g_b) * probe).sum()

    return module, closure


def _build_contrastive(seed: int):
    gen = _gen(seed)
    module = CrossModalNCE(PrototypeImportance(6, 3, hidden=24), temperature=0.2).to(DTYPE)
    _init(module, gen)
    p_series = _randn((3, 3, 6), gen)
    p_text = _randn((3, 3, 6), gen)
    g_series = _randn((3, 6), gen)
    g_text = _randn((3, 6), gen)

    def closure():
        return module(p_series, p_text, g_series, g_text)

    return module, closure


def _build_recon(seed: int, out_channels: int):
    gen = _gen(seed)
    module = PrototypeDecoder(8, n_queries=4, out_channels=out_channels, n_layers=2, n_heads=2).to(
        DTYPE
    )
    _init(module, gen)
    prototypes = _randn((2, 3, 8), gen)
    target = _randn((2, 4, out_channels), gen)

    def closure():
        return torch.mean((module(prototypes) - target) ** 2)

    return module, closure


def _build_fusion(seed: int):
    gen = _gen(seed)
    module = TokenFusion(8, n_layers=2, n_heads=2).to(DTYPE)
    _init(module, gen)
    groups = {
        GROUP_SERIES_PROTO: _randn((2, 3, 8), gen),
        GROUP_SERIES_TIME: _randn((2, 7, 8), gen),
        GROUP_TEXT_PROTO: _randn((2, 3, 8), gen),
        GROUP_TEXT_TIME: _randn((2, 4, 8), gen),
    }
    probes = {name: _randn(tokens.shape, _gen(seed + 1)) for name, tokens in groups.items()}

    def closure():
        out = module(groups)
        return sum((out[name] * probes[name]).sum() for name in out)

    return module, closure


def _build_pooling(seed: int):
    gen = _gen(seed)
    module = ModalitySummary(10).to(DTYPE)
    _init(module, gen)
    protos = _randn((2, 3, 10), gen)
    times = _randn((2, 6, 10), gen)
    probe = _randn((2, 10), _gen(seed + 1))

    def closure():
        return (module(protos, times) * probe).sum()

    return module, closure


def _build_head(seed: int):
    gen = _gen(seed)
    module = PredictionHead(10, 3).to(DTYPE)
    _init(module, gen)
    f_series = _randn((4, 10), gen)
    f_text = _randn((4, 10), gen)
    labels = (torch.rand(4, 3, generator=gen, dtype=DTYPE) < 0.5).to(DTYPE)

    def closure():
        return prediction_loss(module(f_series, f_text), labels, "multilabel")

    return module, closure


def _build_full_model(seed: int):
    from .data import (
        SyntheticConfig,
        VariableSpec,
        compute_norm_stats,
        generate_synthetic,
        normalize,
    )
    from .encoding import ReferenceGrid, collate, tensorize_record

    variables = [
        VariableSpec("flow", "continuous"),
        VariableSpec("pressure", "continuous"),
        VariableSpec("state", "categorical", ("low", "high")),
    ]
    synth = SyntheticConfig(
        n_admissions=3,
        n_motifs=2,
        motif_length_hours=4.0,
        observation_rate=0.5,
        note_rate=3.0,
        noise_std=0.3,
        seed=seed,
        window_hours=8.0,
        note_embedding_dim=6,
    )
    records, _ = generate_synthetic(synth, variables)
    stats = compute_norm_stats(records, variables)
    grid = ReferenceGrid(8, 8.0)
    items = [
        tensorize_record(normalize(r, stats), variables, grid, dtype=DTYPE) for r in records
    ]
    batch = collate(items)
    config = ModelConfig(
        n_variables=3,
        note_dim=6,
        d_model=8,
        k_prototypes=2,
        time2vec_functions=2,
        time_dim=4,
        key_dim=4,
        fusion_heads=2,
        decoder_heads=2,
        grid_points=8,
        window_hours=8.0,
    )
    model = build_model(config, seed=seed, dtype=DTYPE)

    # The text reconstruction target is a stop-gradient constant in the real
    # objective, so it is frozen here; otherwise the finite difference would
    # (correctly) measure derivative flow the graph deliberately blocks.
    with torch.no_grad():
        frozen_text_target = model(batch, train=True, generator=_gen(seed + 9)).text_embedding

    def closure():
        out = model(batch, train=True, generator=_gen(seed + 9))
        pred = prediction_loss(out.logits, batch.labels, model.config.task)
        contrast = model.contrastive(
            out.series_prototypes, out.text_prototypes, out.g_series, out.g_text
        )
        recon_series = torch.mean(
            (model.series_decoder(out.series_prototypes).transpose(1, 2) - batch.locf_values) ** 2
        )
        recon_text = torch.mean(
            (model.text_decoder(out.text_prototypes) - frozen_text_target) ** 2
        )
        return pred + 0.1 * contrast + 0.5 * 0.5 * (recon_series + recon_text)

    return model, closure


def _init(module: torch.nn.Module, generator: torch.Generator) -> None:
    from .model import init_parameters

    init_parameters(module, generator)


COMPONENTS = {
    "gate": _build_gate,
    "series-interpolation": _build_series_interpolation,
    "note-interpolation": _build_note_interpolation,
    "multiscale": _build_multiscale,
    "slot-attention": _build_slot_attention,
    "importance": _build_importance,
    "contrastive": _build_contrastive,
    "recon-series": lambda seed: _build_recon(seed, out_channels=3),
    "recon-text": lambda seed: _build_recon(seed, out_channels=8),
    "fusion": _build_fusion,
    "pooling": _build_pooling,
    "head": _build_head,
    "full-model": _build_full_model,
}


def finite_diff_gradcheck(
    component: str,
    seed: int = 0,
    n_coordinates: int = 200,
    step: float = 1e-5,
    hard_limit: float = 1e-3,
) -> GradCheckReport:
    """Compare autograd against central differences on sampled coordinates.

    Raises :class:`GradCheckError` listing any coordinate whose relative error
    exceeds ``hard_limit``.
    """
    if component not in COMPONENTS:
        raise KeyError(f"unknown component {component!r}; options: {sorted(COMPONENTS)}")
    module, closure = COMPONENTS[component](seed)

    params = [(name, p) for name, p in module.named_parameters() if p.requires_grad]
    module.zero_grad()
    loss = closure()
    loss.backward()
    grads = {
        name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
        for name, p in params
    }

    sizes = [p.numel() for _, p in params]
    total = int(sum(sizes))
    rng = np.random.default_rng(seed)
    chosen = (
        np.arange(total) if total <= n_coordinates
        else np.sort(rng.choice(total, size=n_coordinates, replace=False))
    )
    offsets = np.cumsum([0] + sizes)

    errors: list[tuple[str, int, float]] = []
    with torch.no_grad():
        for flat in chosen:
            slot = int(np.searchsorted(offsets, flat, side="right") - 1)
            name, param = params[slot]
            local = int(flat - offsets[slot])
            view = param.data.view(-1)
            original = view[local].item()
            view[local] = original + step
            f_plus = float(closure())
            view[local] = original - step
            f_minus = float(closure())
            view[local] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = float(grads[name].view(-1)[local])
            rel = abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))
            errors.append((name, local, rel))

    rels = np.array([e[2] for e in errors])
    worst = errors[int(rels.argmax())]
    report = GradCheckReport(
        component=component,
        n_coordinates=len(errors),
        max_rel_error=float(rels.max()),
        mean_rel_error=float(rels.mean()),
        worst=worst,
    )
    failures = [e for e in errors if e[2] > hard_limit]
    if failures:
        raise GradCheckError(
            f"{component}: {len(failures)} coordinate(s) exceed {hard_limit:g}: "
            + ", ".join(f"{n}[{i}]={r:.2e}" for n, i, r in failures[:5]),
            failures,
        )
    return report


def run_all(components: list[str] | None = None, seed: int = 0) -> list[GradCheckReport]:
    names = components or list(COMPONENTS)
    return [finite_diff_gradcheck(name, seed=seed) for name in names]
