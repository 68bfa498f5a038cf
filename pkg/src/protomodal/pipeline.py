"""Glue from a run config to model-ready splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import ConfigError, RunConfig
from .data import (
    AdmissionRecord,
    HashingNoteEmbedder,
    NormStats,
    VariableSpec,
    compute_norm_stats,
    default_clinical_variables,
    embed_notes,
    generate_synthetic,
    load_admissions,
    load_motif_truth,
    load_variable_spec,
    motif_sidecar_path,
    normalize,
    split_by_subject,
)
from .encoding import RecordTensors, ReferenceGrid, tensorize_record

logger = logging.getLogger(__name__)


@dataclass
class PreparedData:
    variables: list[VariableSpec]
    grid: ReferenceGrid
    stats: NormStats
    note_dim: int
    task: str  # "binary" | "multilabel"
    train_items: list[RecordTensors]
    val_items: list[RecordTensors]
    test_items: list[RecordTensors]
    train_records: list[AdmissionRecord]
    val_records: list[AdmissionRecord]
    test_records: list[AdmissionRecord]
    truth: dict | None = None


def load_or_generate(config: RunConfig) -> tuple[list[AdmissionRecord], list[VariableSpec], dict | None]:
    """Materialize records per the data section (synthetic or from disk)."""
    data = config.data
    if data.variable_spec is not None:
        variables = load_variable_spec(data.variable_spec)
    else:
        variables = default_clinical_variables()
    if data.synthetic is not None:
        records, truth = generate_synthetic(data.synthetic, variables)
        return records, variables, truth
    if data.path is None:
        raise ConfigError("data section needs either 'path' or 'synthetic'")
    records = load_admissions(data.path, variables)
    truth = None
    sidecar = motif_sidecar_path(data.path)
    if Path(sidecar).exists():
        truth = load_motif_truth(sidecar)
    return records, variables, truth


def prepare_records(
    records: list[AdmissionRecord], config: RunConfig
) -> list[AdmissionRecord]:
    """Embed notes and drop admissions without any note."""
    embedder = HashingNoteEmbedder(config.data.note_dim, config.data.note_embedder_seed)
    kept = []
    dropped = 0
    for record in records:
        if not record.notes:
            dropped += 1
            continue
        kept.append(embed_notes(record, embedder))
    if dropped:
        logger.warning("dropped %d admission(s) without notes", dropped)
    return kept


def prepare_data(config: RunConfig, stats: NormStats | None = None) -> PreparedData:
    """Generate/load, embed, split, normalize and tensorize everything."""
    records, variables, truth = load_or_generate(config)
    records = prepare_records(records, config)
    if not records:
        raise ConfigError("no usable admissions after filtering")
    task = config.train.model_task
    expected = "binary" if task == "binary" else "multilabel"
    for record in records[:1]:
        if record.labels.task != expected:
            raise ConfigError(
                f"records carry {record.labels.task!r} labels but the configured task "
                f"{config.train.task!r} needs {expected!r}"
            )
    train, val, test = split_by_subject(
        records, ratios=config.data.split_ratios, seed=config.data.split_seed
    )
    if stats is None:
        stats = compute_norm_stats(train, variables)
    grid = ReferenceGrid(config.data.grid.n_points, config.data.grid.window_hours)
    dtype = config.train.torch_dtype

    def tensorize(split: list[AdmissionRecord]) -> list[RecordTensors]:
        return [tensorize_record(normalize(r, stats), variables, grid, dtype=dtype) for r in split]

    return PreparedData(
        variables=variables,
        grid=grid,
        stats=stats,
        note_dim=config.data.note_dim,
        task=task,
        train_items=tensorize(train),
        val_items=tensorize(val),
        test_items=tensorize(test),
        train_records=train,
        val_records=val,
        test_records=test,
        truth=truth,
    )


def items_for_split(prepared: PreparedData, split: str) -> list[RecordTensors]:
    try:
        return {
            "train": prepared.train_items,
            "val": prepared.val_items,
            "test": prepared.test_items,
        }[split]
    except KeyError:
        raise ConfigError(f"unknown split {split!r}; options: train, val, test") from None
