"""Prototype attention reports: delimited output plus optional rendered figures.

For each admission the report records, per prototype, the final assignment
weights over the multi-scale series tokens (mapped back to grid time spans
per scale), the weights over the note-path grid, the prototype importance,
and the top-weighted time windows. One JSON object per admission per line;
``--plots`` additionally renders one PNG per admission.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .data import AdmissionRecord, HashingNoteEmbedder, NormStats, VariableSpec, embed_notes, normalize
from .encoding import ReferenceGrid, collate, tensorize_record
from .model import ProtoModal


class ReportError(ValueError):
    pass


@dataclass
class TokenSpan:
    scale: int  # pooling window
    t_start: float
    t_center: float
    t_end: float


def series_token_spans(grid: ReferenceGrid, multiscale: bool) -> list[TokenSpan]:
    """Time coverage of each series token, in token order."""
    points = grid.points_numpy()
    step = grid.window_hours / grid.n_points
    spans: list[TokenSpan] = []
    windows = (1, 2, 4) if multiscale else (1,)
    for window in windows:
        for i in range(grid.n_points // window):
            covered = points[i * window : (i + 1) * window]
            spans.append(
                TokenSpan(
                    scale=window,
                    t_start=float(covered[0] - step),
                    t_center=float(covered.mean()),
                    t_end=float(covered[-1]),
                )
            )
    return spans


def attention_mass_in_window(
    weights: np.ndarray, spans: list[TokenSpan], t_start: float, t_end: float
) -> float:
    """Fraction of one attention row's mass on tokens centered inside a window."""
    inside = np.array([t_start <= s.t_center <= t_end for s in spans])
    return float(weights[inside].sum() / weights.sum())


def top_windows(weights: np.ndarray, spans: list[TokenSpan], k: int = 3) -> list[dict]:
    order = np.argsort(-weights)[:k]
    return [
        {
            "scale": spans[i].scale,
            "t_start": spans[i].t_start,
            "t_end": spans[i].t_end,
            "t_center": spans[i].t_center,
            "weight": float(weights[i]),
        }
        for i in order
    ]


def prototype_report_rows(
    model: ProtoModal,
    records: list[AdmissionRecord],
    variables: list[VariableSpec],
    stats: NormStats,
    note_embedder_seed: int = 0,
) -> list[dict]:
    """Eval-mode attention report for each record, in order."""
    grid = model.grid
    dtype = next(model.parameters()).dtype
    embedder = HashingNoteEmbedder(model.config.note_dim, note_embedder_seed)
    spans = series_token_spans(grid, model.config.use_multiscale)
    points = [float(p) for p in grid.points_numpy()]
    rows = []
    model.eval()
    for record in records:
        prepared = embed_notes(record, embedder)
        item = tensorize_record(normalize(prepared, stats), variables, grid, dtype=dtype)
        batch = collate([item])
        with torch.no_grad():
            out = model(batch, train=False)
            if out.series_prototypes is None:
                raise ReportError("model was trained without prototypes; nothing to report")
            beta = model.importance(out.g_series, out.g_text)[0]
        w_series = out.series_weights[0].double().cpu().numpy()  # (K, L)
        w_text = out.text_weights[0].double().cpu().numpy()  # (K, T)
        prototypes = []
        for k in range(w_series.shape[0]):
            prototypes.append(
                {
                    "index": k,
                    "beta": float(beta[k]),
                    "top_windows": top_windows(w_series[k], spans),
                }
            )
        rows.append(
            {
                "id": record.id,
                "beta": [float(b) for b in beta],
                "series_attention": {
                    "scales": [s.scale for s in spans],
                    "t_start": [s.t_start for s in spans],
                    "t_center": [s.t_center for s in spans],
                    "t_end": [s.t_end for s in spans],
                    "weights": w_series.tolist(),
                },
                "text_attention": {"times": points, "weights": w_text.tolist()},
                "prototypes": prototypes,
            }
        )
    return rows


def render_admission_figure(row: dict, path: str | Path) -> None:
    """One PNG per admission: both attention maps plus importance bars."""
    w_series = np.asarray(row["series_attention"]["weights"])
    w_text = np.asarray(row["text_attention"]["weights"])
    beta = np.asarray(row["beta"])
    fig, axes = plt.subplots(3, 1, figsize=(9, 7), constrained_layout=True)
    im0 = axes[0].imshow(w_series, aspect="auto", cmap="viridis", interpolation="nearest")
    axes[0].set_title(f"{row['id']}: series-token assignment weights")
    axes[0].set_xlabel("series token (scales 1, 2, 4 concatenated)")
    axes[0].set_ylabel("prototype")
    fig.colorbar(im0, ax=axes[0])
    im1 = axes[1].imshow(w_text, aspect="auto", cmap="viridis", interpolation="nearest")
    axes[1].set_title("note-grid assignment weights")
    axes[1].set_xlabel("grid point")
    axes[1].set_ylabel("prototype")
    fig.colorbar(im1, ax=axes[1])
    axes[2].bar(np.arange(beta.size), beta)
    axes[2].set_title("prototype importance")
    axes[2].set_xlabel("prototype")
    axes[2].set_ylabel("weight")
    fig.savefig(path, dpi=110)
    plt.close(fig)


def export_prototype_report(
    model: ProtoModal,
    records: list[AdmissionRecord],
    variables: list[VariableSpec],
    stats: NormStats,
    out_path: str | Path,
    ids: list[str] | None = None,
    plots: bool = False,
    note_embedder_seed: int = 0,
) -> list[dict]:
    """Write the JSONL report (and optional PNGs) for the requested admissions."""
    by_id = {r.id: r for r in records}
    if ids is not None:
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise ReportError(f"admissions not found in file: {missing}")
        selected = [by_id[i] for i in ids]
    else:
        selected = records
    rows = prototype_report_rows(model, selected, variables, stats, note_embedder_seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    if plots:
        for row in rows:
            render_admission_figure(row, out_path.parent / f"prototypes_{row['id']}.png")
    return rows


def render_history_figure(history_csv: str | Path, path: str | Path) -> None:
    """Loss and validation curves from a training history CSV."""
    import csv as _csv

    with open(history_csv) as fh:
        reader = _csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        raise ReportError(f"empty history file {history_csv}")
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4), constrained_layout=True)
    for column, label in (
        ("loss_total", "total"),
        ("loss_pred", "prediction"),
        ("loss_contrast", "contrastive"),
        ("loss_recon_series", "recon series"),
        ("loss_recon_text", "recon text"),
    ):
        ax0.plot(epochs, [float(r[column]) for r in rows], label=label)
    ax0.set_xlabel("epoch")
    ax0.set_ylabel("training loss")
    ax0.legend(fontsize=8)
    ax1.plot(epochs, [float(r["val_auroc"]) for r in rows], marker="o")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("validation AUROC")
    fig.savefig(path, dpi=110)
    plt.close(fig)
