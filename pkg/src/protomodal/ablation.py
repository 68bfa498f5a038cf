"""Ablation grid runner: toggles, overrides, seeds, aggregated results."""

from __future__ import annotations

import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .config import AblationCell, ConfigError, RunConfig, model_config_from_run
from .pipeline import PreparedData, prepare_data
from .training import TrainConfig, evaluate_model, train_model

# toggle -> ModelConfig field set to False
TOGGLES = {
    "no-prototypes": "use_prototypes",
    "no-timestamp-embeddings": "use_timestamp_tokens",
    "no-multiscale": "use_multiscale",
    "no-contrast": "use_contrastive",
    "no-recon": "use_reconstruction",
}

_MODEL_FIELDS = {
    "d_model",
    "k_prototypes",
    "time2vec_functions",
    "time_dim",
    "key_dim",
    "temperature",
    "slot_iterations",
    "fusion_layers",
    "fusion_heads",
    "decoder_layers",
    "decoder_heads",
}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}


def lambda_grid_cells(pairs=None) -> list[AblationCell]:
    """Loss-weight grid; the default pairs mirror the shipped study axis."""
    pairs = pairs or [(0.1, 0.1), (0.1, 0.5), (0.5, 0.5), (1.0, 0.5), (1.0, 1.0), (1.0, 2.0)]
    return [
        AblationCell(
            name=f"lambda-{l1:g}-{l2:g}",
            overrides={"lambda_contrast": l1, "lambda_recon": l2},
        )
        for l1, l2 in pairs
    ]


def prototype_count_cells(counts=(4, 8, 16, 32)) -> list[AblationCell]:
    return [AblationCell(name=f"k-{k}", overrides={"k_prototypes": k}) for k in counts]


def embedding_cells() -> list[AblationCell]:
    return [
        AblationCell(name="full"),
        AblationCell(name="no-prototypes", toggles=("no-prototypes",)),
        AblationCell(name="no-timestamp-embeddings", toggles=("no-timestamp-embeddings",)),
        AblationCell(name="no-multiscale", toggles=("no-multiscale",)),
    ]


def loss_cells() -> list[AblationCell]:
    return [
        AblationCell(name="neither", toggles=("no-contrast", "no-recon")),
        AblationCell(name="contrast-only", toggles=("no-recon",)),
        AblationCell(name="recon-only", toggles=("no-contrast",)),
        AblationCell(name="both"),
    ]


def apply_cell(
    config: RunConfig, prepared: PreparedData, cell: AblationCell, seed: int
) -> tuple:
    """Model and train configs for one grid cell at one seed."""
    model_config = model_config_from_run(
        config, n_variables=len(prepared.variables), note_dim=prepared.note_dim
    )
    train_config = TrainConfig(**config.train.to_dict())
    for toggle in cell.toggles:
        if toggle not in TOGGLES:
            raise ConfigError(f"unknown ablation toggle {toggle!r}; options: {sorted(TOGGLES)}")
        setattr(model_config, TOGGLES[toggle], False)
    def _set(target, key, value):
        current = getattr(target, key)
        setattr(target, key, value if current is None else type(current)(value))

    for key, value in cell.overrides.items():
        if key in _MODEL_FIELDS:
            _set(model_config, key, value)
        elif key in _TRAIN_FIELDS:
            _set(train_config, key, value)
        else:
            raise ConfigError(f"unknown ablation override {key!r}")
    train_config.seed = seed
    # Removing prototypes leaves the auxiliary losses without inputs.
    if not model_config.use_prototypes:
        model_config.use_contrastive = False
        model_config.use_reconstruction = False
    return model_config, train_config


def run_ablation(
    config: RunConfig,
    cells: list[AblationCell],
    seeds: tuple[int, ...] = (0, 1, 2),
    out_dir: str | Path | None = None,
    prepared: PreparedData | None = None,
    log=None,
) -> dict:
    """Train/evaluate every (cell, seed); returns rows plus per-cell aggregates.

    Writes ``ablation.jsonl`` (one row per cell-seed), ``ablation_summary.json``
    and a rendered text summary when ``out_dir`` is given.
    """
    if prepared is None:
        prepared = prepare_data(config)
    rows = []
    for cell in cells:
        for seed in seeds:
            model_config, train_config = apply_cell(config, prepared, cell, seed)
            t0 = time.perf_counter()
            result = train_model(
                model_config, prepared.train_items, prepared.val_items, train_config, log=log
            )
            report = evaluate_model(result.model, prepared.val_items, prepared.test_items)
            row = {
                "cell": cell.name,
                "toggles": list(cell.toggles),
                "overrides": dict(cell.overrides),
                "seed": seed,
                "auroc": report.auroc,
                "aupr": report.aupr,
                "f1": report.f1,
                "best_epoch": result.history.best_epoch,
                "epochs_run": len(result.history.epochs),
                "wall_seconds": time.perf_counter() - t0,
            }
            rows.append(row)
            if log is not None:
                log(
                    f"[{cell.name} seed {seed}] auroc {report.auroc:.4f} "
                    f"aupr {report.aupr:.4f} f1 {report.f1:.4f}"
                )
    summary = aggregate(rows)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "ablation.jsonl", "w") as fh:
            for row in rows:
                fh.write(json.dumps(row) + "\n")
        (out_dir / "ablation_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        (out_dir / "ablation_summary.txt").write_text(render_summary(summary))
    return {"rows": rows, "summary": summary}


def aggregate(rows: list[dict]) -> list[dict]:
    cells: dict[str, list[dict]] = {}
    for row in rows:
        cells.setdefault(row["cell"], []).append(row)
    out = []
    for name, group in cells.items():
        entry = {"cell": name, "n_seeds": len(group)}
        for metric in ("auroc", "aupr", "f1"):
            values = np.array([r[metric] for r in group], dtype=np.float64)
            entry[f"{metric}_mean"] = float(values.mean())
            entry[f"{metric}_std"] = float(values.std())
        out.append(entry)
    return out


def render_summary(summary: list[dict]) -> str:
    lines = [f"{'cell':<28} {'auroc':>16} {'aupr':>16} {'f1':>16}"]
    for entry in summary:
        lines.append(
            f"{entry['cell']:<28} "
            f"{entry['auroc_mean']:.4f} ± {entry['auroc_std']:.4f} "
            f"{entry['aupr_mean']:.4f} ± {entry['aupr_std']:.4f} "
            f"{entry['f1_mean']:.4f} ± {entry['f1_std']:.4f}"
        )
    return "\n".join(lines) + "\n"
