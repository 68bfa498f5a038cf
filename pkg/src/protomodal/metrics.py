"""Ranking metrics and validation-side threshold selection.

All functions take plain 1-D arrays of scores and {0,1} labels. AUROC is the
probability that a random positive outranks a random negative with ties
counting 0.5; AUPR is average precision with step-function integration and no
interpolation. F1 thresholds are always selected on the validation split and
then applied to the target split.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """The metric is undefined for the given labels."""


def _as_arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise MetricError(f"scores and labels differ in length: {s.shape} vs {y.shape}")
    if s.size == 0:
        raise MetricError("empty inputs")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    return s, y


def auroc(scores, labels) -> float:
    """Rank-based AUROC: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC undefined: labels contain a single class")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def aupr(scores, labels) -> float:
    """Average precision: sum of precision-weighted recall increments."""
    s, y = _as_arrays(scores, labels)
    if y.sum() == 0:
        raise MetricError("AUPR undefined: no positive labels")
    order = np.argsort(-s, kind="mergesort")
    s_sorted = s[order]
    y_sorted = y[order]
    tp = np.cumsum(y_sorted)
    fp = np.cumsum(1 - y_sorted)
    # Evaluate only at the last index of each tied-score block (distinct thresholds).
    distinct = np.nonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])[0]
    precision = tp[distinct] / (tp[distinct] + fp[distinct])
    recall = tp[distinct] / y.sum()
    prev_recall = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev_recall) * precision))


def f1_score(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def f1_best_threshold(val_scores, val_labels, target_scores, target_labels) -> tuple[float, float]:
    """Pick the F1-maximizing threshold on validation, report F1 on the target.

    Candidate thresholds are the unique validation scores (the lowest one is
    equivalent to predicting everything positive); a prediction is positive
    when ``score >= threshold``. Ties in F1 resolve to the lowest threshold.
    Returns ``(target_f1, threshold)``.
    """
    vs, vy = _as_arrays(val_scores, val_labels)
    if vy.sum() == 0 or vy.sum() == vy.size:
        raise MetricError("F1 threshold selection needs both classes on validation")
    candidates = np.unique(vs)  # ascending
    best_f1 = -1.0
    best_thr = float(candidates[0])
    n_pos = int(vy.sum())
    for thr in candidates:
        pred = vs >= thr
        tp = int((pred & (vy == 1)).sum())
        fp = int((pred & (vy == 0)).sum())
        fn = n_pos - tp
        f1 = f1_score(tp, fp, fn)
        if f1 > best_f1 + 1e-15:
            best_f1 = f1
            best_thr = float(thr)
    ts, ty = _as_arrays(target_scores, target_labels)
    pred = ts >= best_thr
    tp = int((pred & (ty == 1)).sum())
    fp = int((pred & (ty == 0)).sum())
    fn = int(((~pred) & (ty == 1)).sum())
    return f1_score(tp, fp, fn), best_thr


@dataclass
class MetricsReport:
    """AUROC/AUPR/F1 on one split, with the validation-selected threshold."""

    auroc: float
    aupr: float
    f1: float
    threshold: float
    macro: bool = False
    per_label: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "auroc": self.auroc,
            "aupr": self.aupr,
            "f1": self.f1,
            "threshold": self.threshold,
            "macro": self.macro,
        }
        if self.per_label:
            out["per_label"] = self.per_label
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsReport":
        return cls(
            auroc=obj["auroc"],
            aupr=obj["aupr"],
            f1=obj["f1"],
            threshold=obj["threshold"],
            macro=obj.get("macro", False),
            per_label=obj.get("per_label", []),
        )


def binary_report(val_scores, val_labels, target_scores, target_labels) -> MetricsReport:
    f1, thr = f1_best_threshold(val_scores, val_labels, target_scores, target_labels)
    return MetricsReport(
        auroc=auroc(target_scores, target_labels),
        aupr=aupr(target_scores, target_labels),
        f1=f1,
        threshold=thr,
    )


def macro_report(val_scores, val_labels, target_scores, target_labels) -> MetricsReport:
    """Multilabel report: per-label metrics plus their macro average.

    ``*_scores``/``*_labels`` are (n, n_labels) arrays. Labels that are
    single-class on the relevant split are skipped in the macro average.
    """
    vs = np.asarray(val_scores, dtype=np.float64)
    vy = np.asarray(val_labels, dtype=np.int64)
    ts = np.asarray(target_scores, dtype=np.float64)
    ty = np.asarray(target_labels, dtype=np.int64)
    per_label = []
    aurocs, auprs, f1s = [], [], []
    for j in range(ts.shape[1]):
        row: dict = {"label": j}
        try:
            row["auroc"] = auroc(ts[:, j], ty[:, j])
            aurocs.append(row["auroc"])
        except MetricError:
            row["auroc"] = None
        try:
            row["aupr"] = aupr(ts[:, j], ty[:, j])
            auprs.append(row["aupr"])
        except MetricError:
            row["aupr"] = None
        try:
            f1, thr = f1_best_threshold(vs[:, j], vy[:, j], ts[:, j], ty[:, j])
            row["f1"] = f1
            row["threshold"] = thr
            f1s.append(f1)
        except MetricError:
            row["f1"] = None
            row["threshold"] = None
        per_label.append(row)
    if not aurocs:
        raise MetricError("macro AUROC undefined: every label is single-class")
    return MetricsReport(
        auroc=float(np.mean(aurocs)),
        aupr=float(np.mean(auprs)) if auprs else 0.0,
        f1=float(np.mean(f1s)) if f1s else 0.0,
        threshold=float("nan"),
        macro=True,
        per_label=per_label,
    )


def macro_auroc(scores, labels) -> float:
    """Mean per-label AUROC over labels with both classes present."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    vals = []
    for j in range(s.shape[1]):
        try:
            vals.append(auroc(s[:, j], y[:, j]))
        except MetricError:
            continue
    if not vals:
        raise MetricError("macro AUROC undefined: every label is single-class")
    return float(np.mean(vals))
