"""Prototype-based cross-modal temporal pattern learning for clinical sequences."""

__version__ = "0.1.0"

from .data import (
    AdmissionRecord,
    HashingNoteEmbedder,
    LabelSet,
    NoteEvent,
    NormStats,
    SyntheticConfig,
    VariableSpec,
    compute_norm_stats,
    default_clinical_variables,
    embed_notes,
    generate_synthetic,
    load_admissions,
    normalize,
    save_admissions,
    split_by_subject,
)
from .encoding import Batch, ReferenceGrid, collate, impute_locf, tensorize_record
from .metrics import MetricsReport, aupr, auroc, f1_best_threshold
from .model import ModelConfig, ProtoModal, build_model

__all__ = [
    "AdmissionRecord",
    "Batch",
    "HashingNoteEmbedder",
    "LabelSet",
    "MetricsReport",
    "ModelConfig",
    "NormStats",
    "NoteEvent",
    "ProtoModal",
    "ReferenceGrid",
    "SyntheticConfig",
    "VariableSpec",
    "aupr",
    "auroc",
    "build_model",
    "collate",
    "compute_norm_stats",
    "default_clinical_variables",
    "embed_notes",
    "f1_best_threshold",
    "generate_synthetic",
    "impute_locf",
    "load_admissions",
    "normalize",
    "save_admissions",
    "split_by_subject",
    "tensorize_record",
]
