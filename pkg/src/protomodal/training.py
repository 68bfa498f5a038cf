"""Optimization loop, evaluation, checkpoints and the overfit harnesses."""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .encoding import Batch, RecordTensors, collate
from .metrics import MetricsReport, auroc, binary_report, macro_auroc, macro_report
from .model import ModelConfig, ProtoModal, build_model


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    """Raised when a loss goes non-finite; carries step diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class TrainConfig:
    """Optimizer and schedule settings."""

    batch_size: int = 128
    learning_rate: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    warmup_fraction: float = 0.2
    grad_clip_norm: float = 0.5
    early_stop_patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    lambda_contrast: float = 0.1
    lambda_recon: float = 0.5
    task: str = "mortality"  # "mortality" (binary) | "phenotypes" (multilabel)
    dtype: str = "float64"
    threads: int | None = None
    early_stopping: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise TrainingError("warmup_fraction must lie in [0, 1)")
        for name in ("batch_size", "learning_rate", "grad_clip_norm", "max_epochs"):
            if getattr(self, name) <= 0:
                raise TrainingError(f"{name} must be positive")
        if self.task not in ("mortality", "phenotypes"):
            raise TrainingError(f"unknown task {self.task!r}")
        if self.dtype not in ("float64", "float32"):
            raise TrainingError(f"dtype must be float64 or float32, got {self.dtype!r}")

    @property
    def model_task(self) -> str:
        return "binary" if self.task == "mortality" else "multilabel"

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        return cls(**obj)


def cosine_warmup_lr(step: int, total_steps: int, warmup_fraction: float, peak: float) -> float:
    """Linear warmup from 0, then cosine decay from peak to 0."""
    if total_steps < 1:
        raise TrainingError("total_steps must be positive")
    warmup_steps = int(math.floor(warmup_fraction * total_steps))
    if warmup_steps > 0 and step < warmup_steps:
        return peak * step / warmup_steps
    remaining = max(1, total_steps - warmup_steps)
    progress = (step - warmup_steps) / remaining
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


@dataclass
class EpochStats:
    epoch: int
    train_losses: dict[str, float]
    val_auroc: float
    learning_rate: float
    wall_seconds: float


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)
    step_losses: list[dict[str, float]] = field(default_factory=list)
    best_epoch: int = -1
    best_val_auroc: float = float("-inf")
    stopped_early: bool = False

    COLUMNS = (
        "epoch",
        "loss_total",
        "loss_pred",
        "loss_contrast",
        "loss_recon_series",
        "loss_recon_text",
        "val_auroc",
        "learning_rate",
        "wall_seconds",
    )

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.epochs:
                writer.writerow(
                    [
                        row.epoch,
                        row.train_losses["total"],
                        row.train_losses["pred"],
                        row.train_losses["contrast"],
                        row.train_losses["recon_series"],
                        row.train_losses["recon_text"],
                        row.val_auroc,
                        row.learning_rate,
                        row.wall_seconds,
                    ]
                )


@dataclass
class TrainResult:
    model: ProtoModal
    history: TrainHistory


def _batches(n: int, batch_size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for start in range(0, n, batch_size):
        yield idx[start : start + batch_size]


def predict_scores(
    model: ProtoModal, items: list[RecordTensors], batch_size: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode sigmoid scores and labels, in dataset order."""
    model.eval()
    scores, labels = [], []
    with torch.no_grad():
        for idx in _batches(len(items), batch_size):
            batch = collate([items[i] for i in idx])
            out = model(batch, train=False)
            prob = torch.sigmoid(out.logits)
            if model.config.task == "binary":
                prob = prob.squeeze(-1)
            scores.append(prob.double().cpu().numpy())
            labels.append(batch.labels.double().cpu().numpy())
    return np.concatenate(scores), np.concatenate(labels)


def _validation_auroc(model: ProtoModal, items: list[RecordTensors], batch_size: int) -> float:
    scores, labels = predict_scores(model, items, batch_size)
    if model.config.task == "binary":
        return auroc(scores, labels)
    return macro_auroc(scores, labels)


def train_model(
    model_config: ModelConfig,
    train_items: list[RecordTensors],
    val_items: list[RecordTensors],
    config: TrainConfig,
    log=None,
) -> TrainResult:
    """Train from scratch and return the best-validation-AUROC model.

    Single-threaded 64-bit runs with identical config and seed produce
    bitwise-identical loss traces; all randomness flows from ``config.seed``.
    """
    if config.threads is not None:
        torch.set_num_threads(config.threads)
    if not train_items or not val_items:
        raise TrainingError("train and validation splits must be non-empty")

    model = build_model(model_config, seed=config.seed, dtype=config.torch_dtype)
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=config.learning_rate,
        betas=(config.beta1, config.beta2),
        eps=config.adam_eps,
    )
    forward_gen = torch.Generator()
    forward_gen.manual_seed(config.seed + 1)

    steps_per_epoch = math.ceil(len(train_items) / config.batch_size)
    total_steps = steps_per_epoch * config.max_epochs
    history = TrainHistory()
    best_state: dict | None = None
    step = 0
    epochs_since_best = 0

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        model.train()
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_items))
        sums: dict[str, float] = {}
        lr = config.learning_rate
        for idx in _batches(len(train_items), config.batch_size, order):
            lr = cosine_warmup_lr(
                step, total_steps, config.warmup_fraction, config.learning_rate
            )
            for group in optimizer.param_groups:
                group["lr"] = lr
            batch = collate([train_items[i] for i in idx])
            out = model(batch, train=True, generator=forward_gen)
            bundle = model.losses(batch, out, config.lambda_contrast, config.lambda_recon)
            floats = bundle.detached()
            if not all(math.isfinite(v) for v in floats.values()):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}",
                    {
                        "step": step,
                        "epoch": epoch,
                        "losses": floats,
                        "parameter_norms": {
                            name: float(p.detach().norm())
                            for name, p in model.named_parameters()
                        },
                    },
                )
            optimizer.zero_grad()
            bundle.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip_norm)
            optimizer.step()
            history.step_losses.append(floats)
            for key, value in floats.items():
                sums[key] = sums.get(key, 0.0) + value
            step += 1

        val_score = _validation_auroc(model, val_items, config.batch_size)
        means = {k: v / steps_per_epoch for k, v in sums.items()}
        history.epochs.append(
            EpochStats(
                epoch=epoch,
                train_losses=means,
                val_auroc=val_score,
                learning_rate=lr,
                wall_seconds=time.perf_counter() - t0,
            )
        )
        if log is not None:
            log(
                f"epoch {epoch}: total {means['total']:.4f} pred {means['pred']:.4f} "
                f"val_auroc {val_score:.4f} lr {lr:.2e}"
            )
        if val_score > history.best_val_auroc:
            history.best_val_auroc = val_score
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if config.early_stopping and epochs_since_best >= config.early_stop_patience:
                history.stopped_early = True
                break

    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model=model, history=history)


def evaluate_model(
    model: ProtoModal,
    val_items: list[RecordTensors],
    target_items: list[RecordTensors],
    batch_size: int = 256,
) -> MetricsReport:
    """Deterministic eval: F1 threshold from validation, metrics on the target."""
    val_scores, val_labels = predict_scores(model, val_items, batch_size)
    target_scores, target_labels = predict_scores(model, target_items, batch_size)
    if model.config.task == "binary":
        return binary_report(val_scores, val_labels, target_scores, target_labels)
    return macro_report(val_scores, val_labels, target_scores, target_labels)


# ---------------------------------------------------------------------------
# overfit harnesses
# ---------------------------------------------------------------------------


def overfit_reconstruction(
    model: ProtoModal, batch: Batch, steps: int = 500, lr: float = 1e-2
) -> dict:
    """Fit only the two reconstruction decoders to one batch.

    The prototype banks and targets are computed once in eval mode and frozen,
    making this a capacity check on the decoders. Returns initial and final
    losses for both paths.
    """
    if not model.config.use_prototypes or not model.config.use_reconstruction:
        raise TrainingError("reconstruction overfit needs prototypes and reconstruction enabled")
    model.eval()
    with torch.no_grad():
        out = model(batch, train=False)
        p_series = out.series_prototypes.detach()
        p_text = out.text_prototypes.detach()
        target_series = model._cast_batch(batch).locf_values
        target_text = out.text_embedding.detach()
    params = list(model.series_decoder.parameters()) + list(model.text_decoder.parameters())
    optimizer = torch.optim.Adam(params, lr=lr)

    def current() -> tuple[torch.Tensor, torch.Tensor]:
        series = torch.mean((model.series_decoder(p_series).transpose(1, 2) - target_series) ** 2)
        text = torch.mean((model.text_decoder(p_text) - target_text) ** 2)
        return series, text

    with torch.no_grad():
        s0, t0 = current()
    initial = {"recon_series": float(s0), "recon_text": float(t0)}
    for _ in range(steps):
        series, text = current()
        loss = series + text
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    with torch.no_grad():
        s1, t1 = current()
    return {
        "initial": initial,
        "final": {"recon_series": float(s1), "recon_text": float(t1)},
        "steps": steps,
    }


def training_accuracy(model: ProtoModal, items: list[RecordTensors], batch_size: int = 256) -> float:
    """Fraction of correct 0.5-threshold predictions (binary) or labels (multilabel)."""
    scores, labels = predict_scores(model, items, batch_size)
    return float(((scores >= 0.5).astype(np.int64) == labels.astype(np.int64)).mean())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(
    path: str | Path,
    model: ProtoModal,
    train_config: TrainConfig,
    run_config: dict | None,
    norm_stats: dict,
    history: TrainHistory,
    val_report: MetricsReport,
) -> dict:
    """Write the checkpoint binary and its JSON manifest; returns the manifest."""
    path = Path(path)
    payload = {
        "model_state": model.state_dict(),
        "model_config": model.config.to_dict(),
        "train_config": train_config.to_dict(),
        "run_config": run_config,
        "norm_stats": norm_stats,
        "best_epoch": history.best_epoch,
        "val_metrics": val_report.to_dict(),
    }
    identity = config_hash(
        {"model": payload["model_config"], "train": payload["train_config"], "run": run_config}
    )
    payload["config_hash"] = identity
    torch.save(payload, path)
    manifest = {
        "config_hash": identity,
        "best_epoch": history.best_epoch,
        "val_metrics": val_report.to_dict(),
        "history_columns": list(TrainHistory.COLUMNS),
        "checkpoint": path.name,
    }
    manifest_path = path.with_suffix(".manifest.json")
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def load_checkpoint(path: str | Path) -> dict:
    """Load a checkpoint; returns the payload with a rebuilt ``model``."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model_config = ModelConfig.from_dict(payload["model_config"])
    train_config = TrainConfig.from_dict(payload["train_config"])
    model = ProtoModal(model_config).to(train_config.torch_dtype)
    model.load_state_dict(payload["model_state"])
    model.eval()
    payload["model"] = model
    payload["train_config_obj"] = train_config
    return payload
