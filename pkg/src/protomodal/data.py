"""Admission records, variable specs, dataset IO, normalization and synthetic data.

The on-disk admissions format is line-delimited JSON, one record per line:

    {"id": "a-0001", "subject_id": "s-0001", "window_hours": 48.0,
     "series": {"heart_rate": [[0.5, 81.0], [3.2, 97.5]], ...},
     "notes": [{"t": 4.0, "text": "..."} | {"t": 4.0, "embedding": [...]}],
     "labels": {"mortality": 1} | {"phenotypes": [0, 1, ...]}}

Times are hours since admission start. Categorical series values are level
strings until :func:`normalize` maps them to standardized ordinal codes.
Synthetic datasets get a ground-truth sidecar (``<basename>.motifs``) mapping
each admission id to its planted motif indices and time intervals.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PHENOTYPE_COUNT = 25


class DataError(ValueError):
    """Base class for dataset problems."""


class ParseError(DataError):
    """A line could not be decoded."""


class SchemaError(DataError):
    """A record references variables outside the spec."""


class RecordValidationError(DataError):
    """A record violates an admission invariant."""


# ---------------------------------------------------------------------------
# variable specification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableSpec:
    """One clinical variable: continuous, or categorical with ordered levels."""

    name: str
    kind: str  # "continuous" | "categorical"
    levels: tuple[str, ...] = ()
    unit: str = ""

    def __post_init__(self) -> None:
        if self.kind not in ("continuous", "categorical"):
            raise SchemaError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.levels:
                raise SchemaError(f"categorical variable {self.name!r} has no levels")
            if len(set(self.levels)) != len(self.levels):
                raise SchemaError(f"categorical variable {self.name!r} has duplicate levels")
        elif self.levels:
            raise SchemaError(f"continuous variable {self.name!r} must not define levels")


_GCS_TOTAL_LEVELS = tuple(str(v) for v in range(3, 16))


def default_clinical_variables() -> list[VariableSpec]:
    """The default 17-variable bedside spec: 5 categorical, 12 continuous."""
    return [
        VariableSpec("capillary_refill_rate", "categorical", ("brisk", "delayed")),
        VariableSpec(
            "gcs_eye_opening",
            "categorical",
            ("none", "to_pain", "to_speech", "spontaneous"),
        ),
        VariableSpec(
            "gcs_motor_response",
            "categorical",
            ("none", "extension", "flexion", "withdraws", "localizes", "obeys"),
        ),
        VariableSpec("gcs_total", "categorical", _GCS_TOTAL_LEVELS),
        VariableSpec(
            "gcs_verbal_response",
            "categorical",
            ("none", "incomprehensible", "inappropriate", "confused", "oriented"),
        ),
        VariableSpec("diastolic_blood_pressure", "continuous", unit="mmHg"),
        VariableSpec("fraction_inspired_oxygen", "continuous", unit="fraction"),
        VariableSpec("glucose", "continuous", unit="mg/dL"),
        VariableSpec("heart_rate", "continuous", unit="bpm"),
        VariableSpec("height", "continuous", unit="cm"),
        VariableSpec("mean_blood_pressure", "continuous", unit="mmHg"),
        VariableSpec("oxygen_saturation", "continuous", unit="%"),
        VariableSpec("respiratory_rate", "continuous", unit="breaths/min"),
        VariableSpec("systolic_blood_pressure", "continuous", unit="mmHg"),
        VariableSpec("temperature", "continuous", unit="C"),
        VariableSpec("weight", "continuous", unit="kg"),
        VariableSpec("ph", "continuous", unit="pH"),
    ]


def load_variable_spec(path: str | Path) -> list[VariableSpec]:
    """Read a variable spec file (JSON list of {name, kind, levels?, unit?})."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, list):
        raise SchemaError(f"{path}: variable spec must be a JSON list")
    out = []
    for entry in raw:
        out.append(
            VariableSpec(
                name=entry["name"],
                kind=entry["kind"],
                levels=tuple(entry.get("levels", ()) or ()),
                unit=entry.get("unit", ""),
            )
        )
    return out


def save_variable_spec(variables: list[VariableSpec], path: str | Path) -> None:
    payload = [
        {"name": v.name, "kind": v.kind, "levels": list(v.levels), "unit": v.unit}
        for v in variables
    ]
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------


@dataclass
class NoteEvent:
    """A timestamped note: free text, a precomputed embedding, or both."""

    time: float
    text: str | None = None
    embedding: list[float] | None = None


@dataclass
class LabelSet:
    task: str  # "binary" | "multilabel"
    binary_label: int | None = None
    multilabel: list[int] | None = None

    def __post_init__(self) -> None:
        if self.task == "binary":
            if self.binary_label not in (0, 1):
                raise RecordValidationError(f"binary label must be 0 or 1, got {self.binary_label!r}")
        elif self.task == "multilabel":
            if self.multilabel is None or len(self.multilabel) != PHENOTYPE_COUNT:
                got = None if self.multilabel is None else len(self.multilabel)
                raise RecordValidationError(
                    f"multilabel task requires {PHENOTYPE_COUNT} labels, got {got}"
                )
            if any(v not in (0, 1) for v in self.multilabel):
                raise RecordValidationError("multilabel entries must be 0 or 1")
        else:
            raise RecordValidationError(f"unknown task {self.task!r}")


@dataclass
class AdmissionRecord:
    """One admission: irregular per-variable series, timed notes and labels."""

    id: str
    subject_id: str
    window_hours: float
    series: dict[str, list[tuple[float, float | str]]]
    notes: list[NoteEvent]
    labels: LabelSet

    def validate(self, variables: list[VariableSpec]) -> None:
        """Check the admission invariants against a variable spec."""
        if self.window_hours <= 0:
            raise RecordValidationError(f"record {self.id!r}: window_hours must be positive")
        known = {v.name for v in variables}
        for name, obs in self.series.items():
            if name not in known:
                raise SchemaError(f"record {self.id!r}: unknown variable {name!r}")
            prev = -math.inf
            for t, _ in obs:
                if not 0.0 <= t <= self.window_hours:
                    raise RecordValidationError(
                        f"record {self.id!r}: observation of {name!r} at t={t} "
                        f"outside [0, {self.window_hours}]"
                    )
                if t < prev:
                    raise RecordValidationError(
                        f"record {self.id!r}: times of {name!r} are not sorted"
                    )
                prev = t
        for note in self.notes:
            if not 0.0 <= note.time <= self.window_hours:
                raise RecordValidationError(
                    f"record {self.id!r}: note at t={note.time} outside [0, {self.window_hours}]"
                )


def _labels_to_json(labels: LabelSet) -> dict:
    if labels.task == "binary":
        return {"mortality": labels.binary_label}
    return {"phenotypes": list(labels.multilabel or [])}


def _labels_from_json(obj: dict) -> LabelSet:
    if "mortality" in obj:
        return LabelSet(task="binary", binary_label=int(obj["mortality"]))
    if "phenotypes" in obj:
        return LabelSet(task="multilabel", multilabel=[int(v) for v in obj["phenotypes"]])
    raise RecordValidationError(f"labels object {obj!r} has neither 'mortality' nor 'phenotypes'")


def record_to_json(record: AdmissionRecord) -> dict:
    notes = []
    for n in record.notes:
        entry: dict = {"t": n.time}
        if n.text is not None:
            entry["text"] = n.text
        if n.embedding is not None:
            entry["embedding"] = list(n.embedding)
        notes.append(entry)
    return {
        "id": record.id,
        "subject_id": record.subject_id,
        "window_hours": record.window_hours,
        "series": {name: [[t, v] for t, v in obs] for name, obs in record.series.items()},
        "notes": notes,
        "labels": _labels_to_json(record.labels),
    }


def record_from_json(obj: dict) -> AdmissionRecord:
    try:
        series = {
            str(name): [(float(t), v if isinstance(v, str) else float(v)) for t, v in obs]
            for name, obs in obj["series"].items()
        }
        notes = [
            NoteEvent(
                time=float(n["t"]),
                text=n.get("text"),
                embedding=[float(x) for x in n["embedding"]] if "embedding" in n else None,
            )
            for n in obj.get("notes", [])
        ]
        return AdmissionRecord(
            id=str(obj["id"]),
            subject_id=str(obj["subject_id"]),
            window_hours=float(obj["window_hours"]),
            series=series,
            notes=notes,
            labels=_labels_from_json(obj["labels"]),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed record object: {exc}") from exc


def save_admissions(records: list[AdmissionRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record)) + "\n")


def load_admissions(path: str | Path, variables: list[VariableSpec]) -> list[AdmissionRecord]:
    """Load and validate a line-delimited admissions file."""
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            try:
                record = record_from_json(obj)
            except ParseError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
            record.validate(variables)
            records.append(record)
    return records


def motif_sidecar_path(admissions_path: str | Path) -> Path:
    return Path(admissions_path).with_suffix(".motifs")


def save_motif_truth(truth: dict[str, dict], path: str | Path) -> None:
    Path(path).write_text(json.dumps(truth, indent=2) + "\n")


def load_motif_truth(path: str | Path) -> dict[str, dict]:
    return json.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass
class ContinuousStats:
    mean: float
    std: float


@dataclass
class CategoricalStats:
    codes: dict[str, int]
    code_mean: float
    code_std: float


@dataclass
class NormStats:
    """Train-split statistics used to standardize every split."""

    continuous: dict[str, ContinuousStats] = field(default_factory=dict)
    categorical: dict[str, CategoricalStats] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "continuous": {k: [v.mean, v.std] for k, v in self.continuous.items()},
            "categorical": {
                k: {"codes": v.codes, "mean": v.code_mean, "std": v.code_std}
                for k, v in self.categorical.items()
            },
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NormStats":
        return cls(
            continuous={k: ContinuousStats(*v) for k, v in obj["continuous"].items()},
            categorical={
                k: CategoricalStats(dict(v["codes"]), v["mean"], v["std"])
                for k, v in obj["categorical"].items()
            },
        )


def compute_norm_stats(train: list[AdmissionRecord], variables: list[VariableSpec]) -> NormStats:
    """Pool all training observations per variable; population mean/std.

    Variables that are constant or never observed on the training split get
    standard deviation 1 (and mean 0 when never observed) with a logged
    warning. Categorical levels are coded 0..n_levels-1 in spec order and the
    code distribution is standardized the same way.
    """
    if not train:
        raise DataError("compute_norm_stats requires a non-empty training split")
    pooled: dict[str, list[float]] = {v.name: [] for v in variables}
    for record in train:
        for name, obs in record.series.items():
            if name in pooled:
                pooled[name].extend(v for _, v in obs)

    stats = NormStats()
    for var in variables:
        values = pooled[var.name]
        if var.kind == "continuous":
            if not values:
                logger.warning("variable %r never observed on train; using stats (0, 1)", var.name)
                stats.continuous[var.name] = ContinuousStats(0.0, 1.0)
                continue
            arr = np.asarray(values, dtype=np.float64)
            mean = float(arr.mean())
            std = float(arr.std())
            if std == 0.0:
                logger.warning("variable %r constant on train; using std 1", var.name)
                std = 1.0
            stats.continuous[var.name] = ContinuousStats(mean, std)
        else:
            codes = {level: i for i, level in enumerate(var.levels)}
            coded = []
            for v in values:
                if v not in codes:
                    raise RecordValidationError(
                        f"unknown level {v!r} for categorical variable {var.name!r}"
                    )
                coded.append(codes[v])
            if not coded:
                logger.warning("variable %r never observed on train; using stats (0, 1)", var.name)
                stats.categorical[var.name] = CategoricalStats(codes, 0.0, 1.0)
                continue
            arr = np.asarray(coded, dtype=np.float64)
            mean = float(arr.mean())
            std = float(arr.std())
            if std == 0.0:
                logger.warning("variable %r constant on train; using std 1", var.name)
                std = 1.0
            stats.categorical[var.name] = CategoricalStats(codes, mean, std)
    return stats


def normalize(record: AdmissionRecord, stats: NormStats) -> AdmissionRecord:
    """Standardize a record with train-split stats; returns a new record."""
    series: dict[str, list[tuple[float, float | str]]] = {}
    for name, obs in record.series.items():
        if name in stats.continuous:
            st = stats.continuous[name]
            series[name] = [(t, (float(v) - st.mean) / st.std) for t, v in obs]
        elif name in stats.categorical:
            st = stats.categorical[name]
            scaled = []
            for t, v in obs:
                if v not in st.codes:
                    raise RecordValidationError(
                        f"record {record.id!r}: unknown level {v!r} for variable {name!r}"
                    )
                scaled.append((t, (st.codes[v] - st.code_mean) / st.code_std))
            series[name] = scaled
        else:
            raise SchemaError(f"record {record.id!r}: variable {name!r} missing from stats")
    return replace(record, series=series)


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


def split_by_subject(
    records: list[AdmissionRecord],
    ratios: tuple[float, float, float] = (0.70, 0.10, 0.20),
    seed: int = 0,
) -> tuple[list[AdmissionRecord], list[AdmissionRecord], list[AdmissionRecord]]:
    """Deterministic subject-level train/val/test split.

    Validation and test sizes are floored at the subject level; the remainder
    goes to train. All admissions of one subject land in exactly one split.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < 3:
        raise DataError(f"need at least 3 subjects to split, got {len(subjects)}")
    rng = np.random.default_rng(seed)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    n_val = math.floor(ratios[1] * len(subjects))
    n_test = math.floor(ratios[2] * len(subjects))
    val_ids = set(order[:n_val])
    test_ids = set(order[n_val : n_val + n_test])
    train, val, test = [], [], []
    for record in records:
        if record.subject_id in val_ids:
            val.append(record)
        elif record.subject_id in test_ids:
            test.append(record)
        else:
            train.append(record)
    return train, val, test


# ---------------------------------------------------------------------------
# note embedding
# ---------------------------------------------------------------------------


class HashingNoteEmbedder:
    """Seeded feature-hashing bag-of-words note embedder.

    Fully self-contained: tokens are hashed with a keyed blake2b digest into
    ``dim`` signed buckets and the result is L2-normalized. Empty text maps to
    the zero vector. The same (text, seed, dim) always yields the same vector.
    """

    def __init__(self, dim: int = 128, seed: int = 0):
        if dim < 1:
            raise DataError("embedder dim must be positive")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=True)

    def embed(self, text: str) -> list[float]:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in text.lower().split():
            token = "".join(ch for ch in token if ch.isalnum())
            if not token:
                continue
            digest = hashlib.blake2b(token.encode(), key=self._key, digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            idx = h % self.dim
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0:
            vec /= norm
        return [float(x) for x in vec]


def embed_notes(record: AdmissionRecord, embedder) -> AdmissionRecord:
    """Fill in embeddings for all text-bearing notes; precomputed ones pass through."""
    notes = []
    for i, note in enumerate(record.notes):
        if note.embedding is not None:
            if len(note.embedding) != embedder.dim:
                raise RecordValidationError(
                    f"record {record.id!r}: note {i} embedding has length "
                    f"{len(note.embedding)}, expected {embedder.dim}"
                )
            notes.append(note)
        elif note.text is not None:
            notes.append(replace(note, embedding=embedder.embed(note.text)))
        else:
            raise RecordValidationError(
                f"record {record.id!r}: note {i} has neither text nor embedding"
            )
    return replace(record, notes=notes)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------


LABEL_RULES = ("motif-presence-binary", "motif-subset-multilabel", "motif-timing-binary")


@dataclass
class SyntheticConfig:
    """Controls the planted-motif synthetic dataset.

    ``label_rule``:
      * ``motif-presence-binary`` — label 1 iff motif 0 is present.
      * ``motif-subset-multilabel`` — phenotype ``l`` is 1 iff motif
        ``l % n_motifs`` is present.
      * ``motif-timing-binary`` — motifs 0 and 1 are always planted; label 1
        iff motif 0 starts before motif 1.

    ``noise_std`` scales both the per-variable observation noise (in units of
    each variable's motif amplitude scale) and the random onset jitter; at 0
    every admission with a given motif has an identical underlying curve.
    """

    n_admissions: int = 200
    n_motifs: int = 2
    motif_length_hours: float = 16.0
    observation_rate: float = 0.3  # expected observations per variable per hour
    note_rate: float = 6.0  # Poisson mean, clamped to at least one note
    label_rule: str = "motif-presence-binary"
    noise_std: float = 0.5
    seed: int = 0
    window_hours: float = 48.0
    note_embedding_dim: int = 128

    def __post_init__(self) -> None:
        if self.n_motifs < 2:
            raise DataError("n_motifs must be at least 2")
        if self.observation_rate <= 0:
            raise DataError("observation_rate must be positive")
        if self.label_rule not in LABEL_RULES:
            raise DataError(f"unknown label_rule {self.label_rule!r}; options: {LABEL_RULES}")
        if self.n_admissions < 1 or self.window_hours <= 0 or self.noise_std < 0:
            raise DataError("invalid synthetic config")
        if self.motif_length_hours <= 0 or self.motif_length_hours > self.window_hours:
            raise DataError("motif_length_hours must lie in (0, window_hours]")

    def to_dict(self) -> dict:
        return {
            "n_admissions": self.n_admissions,
            "n_motifs": self.n_motifs,
            "motif_length_hours": self.motif_length_hours,
            "observation_rate": self.observation_rate,
            "note_rate": self.note_rate,
            "label_rule": self.label_rule,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "window_hours": self.window_hours,
            "note_embedding_dim": self.note_embedding_dim,
        }


# Motif shape templates on s in [0, 1].
def _ramp(s: np.ndarray) -> np.ndarray:
    return 2.0 * s - 1.0


def _dip(s: np.ndarray) -> np.ndarray:
    return -np.sin(np.pi * s)


def _oscillation(s: np.ndarray) -> np.ndarray:
    return np.sin(4.0 * np.pi * s)


def _spike(s: np.ndarray) -> np.ndarray:
    return np.exp(-(((s - 0.5) / 0.15) ** 2))


def _step(s: np.ndarray) -> np.ndarray:
    return np.tanh(8.0 * (s - 0.4))


_MOTIF_TEMPLATES = (_ramp, _dip, _oscillation, _spike, _step)

# Raw-unit baseline (value, slow-wave amplitude, period hours, motif amplitude
# scale) per continuous default variable. Other specs fall back to (0, 0, 24, 1).
_VARIABLE_BASELINES = {
    "diastolic_blood_pressure": (75.0, 4.0, 24.0, 12.0),
    "fraction_inspired_oxygen": (0.35, 0.02, 24.0, 0.15),
    "glucose": (135.0, 10.0, 12.0, 45.0),
    "heart_rate": (85.0, 5.0, 24.0, 20.0),
    "height": (170.0, 0.0, 24.0, 0.0),
    "mean_blood_pressure": (85.0, 4.0, 24.0, 14.0),
    "oxygen_saturation": (96.5, 0.5, 24.0, 3.0),
    "respiratory_rate": (18.0, 1.5, 24.0, 6.0),
    "systolic_blood_pressure": (120.0, 5.0, 24.0, 18.0),
    "temperature": (37.0, 0.3, 24.0, 1.2),
    "weight": (78.0, 0.0, 24.0, 0.0),
    "ph": (7.40, 0.01, 24.0, 0.06),
}


@dataclass
class _Motif:
    index: int
    template: int
    variables: list[int]  # indices into the continuous variable list
    amplitudes: list[float]
    canonical_onset: float
    note_vector: np.ndarray


def _build_motifs(config: SyntheticConfig, continuous: list[str], rng: np.random.Generator) -> list[_Motif]:
    motifs = []
    usable = [i for i, name in enumerate(continuous) if _VARIABLE_BASELINES.get(name, (0, 0, 24, 1))[3] > 0]
    if not usable:
        usable = list(range(len(continuous)))
    span = config.window_hours - config.motif_length_hours
    for m in range(config.n_motifs):
        k = min(len(usable), int(rng.integers(4, 7)))
        chosen = sorted(rng.choice(usable, size=k, replace=False).tolist())
        amps = (rng.uniform(1.0, 1.8, size=k) * rng.choice([-1.0, 1.0], size=k)).tolist()
        vec = rng.normal(size=config.note_embedding_dim)
        vec /= np.linalg.norm(vec)
        onset = span * (0.15 + 0.7 * m / max(1, config.n_motifs - 1)) if span > 0 else 0.0
        motifs.append(
            _Motif(
                index=m,
                template=m % len(_MOTIF_TEMPLATES),
                variables=chosen,
                amplitudes=amps,
                canonical_onset=onset,
                note_vector=vec,
            )
        )
    return motifs


def _assign_motifs(config: SyntheticConfig, rng: np.random.Generator) -> list[int]:
    """Pick the motif indices planted in one admission."""
    if config.label_rule == "motif-timing-binary":
        present = [0, 1]
        for m in range(2, config.n_motifs):
            if rng.random() < 0.25:
                present.append(m)
        return present
    present = []
    if rng.random() < 0.5:
        present.append(0)
    others = list(range(1, config.n_motifs))
    n_extra = 1 + (1 if (len(others) > 1 and rng.random() < 0.35) else 0)
    present.extend(rng.choice(others, size=min(n_extra, len(others)), replace=False).tolist())
    return sorted(set(present))


def generate_synthetic(
    config: SyntheticConfig, variables: list[VariableSpec] | None = None
) -> tuple[list[AdmissionRecord], dict[str, dict]]:
    """Generate admissions with planted cross-modal motifs.

    Returns the records plus a ground-truth mapping
    ``id -> {"motifs": [...], "intervals": [[start, end], ...]}`` used by
    oracle tests and the prototype report checks.
    """
    variables = variables if variables is not None else default_clinical_variables()
    rng = np.random.default_rng(config.seed)
    continuous = [v.name for v in variables if v.kind == "continuous"]
    categorical = [v for v in variables if v.kind == "categorical"]
    motifs = _build_motifs(config, continuous, rng)
    span = max(0.0, config.window_hours - config.motif_length_hours)

    # Subjects: roughly 15% carry two admissions so subject-level splitting
    # has something to protect.
    subject_of: list[int] = []
    sid = 0
    i = 0
    while i < config.n_admissions:
        repeat = 2 if (rng.random() < 0.15 and i + 1 < config.n_admissions) else 1
        for _ in range(repeat):
            subject_of.append(sid)
            i += 1
        sid += 1

    records: list[AdmissionRecord] = []
    truth: dict[str, dict] = {}
    for adm in range(config.n_admissions):
        present = _assign_motifs(config, rng)
        onsets = []
        for m in present:
            if config.label_rule == "motif-timing-binary":
                onsets.append(float(rng.uniform(0.0, span)) if span > 0 else 0.0)
            elif config.noise_std == 0.0 or span == 0.0:
                onsets.append(motifs[m].canonical_onset)
            else:
                jitter = min(0.1 * config.window_hours, 0.5 * span)
                onsets.append(
                    float(
                        np.clip(
                            motifs[m].canonical_onset + rng.uniform(-jitter, jitter), 0.0, span
                        )
                    )
                )
        if config.label_rule == "motif-timing-binary" and math.isclose(onsets[0], onsets[1]):
            onsets[1] += 1e-6

        def curve(var_idx: int, times: np.ndarray) -> np.ndarray:
            name = continuous[var_idx]
            base, wave_amp, period, scale = _VARIABLE_BASELINES.get(name, (0.0, 0.0, 24.0, 1.0))
            values = base + wave_amp * np.sin(2.0 * np.pi * times / period)
            for m, onset in zip(present, onsets):
                motif = motifs[m]
                if var_idx not in motif.variables:
                    continue
                amp = motif.amplitudes[motif.variables.index(var_idx)]
                inside = (times >= onset) & (times <= onset + config.motif_length_hours)
                if inside.any():
                    s = (times[inside] - onset) / config.motif_length_hours
                    values[inside] += amp * scale * _MOTIF_TEMPLATES[motif.template](s)
            return values

        series: dict[str, list[tuple[float, float | str]]] = {}
        for j, name in enumerate(continuous):
            n_obs = rng.poisson(config.observation_rate * config.window_hours)
            if n_obs == 0:
                continue
            times = np.sort(rng.uniform(0.0, config.window_hours, size=n_obs))
            scale = _VARIABLE_BASELINES.get(name, (0.0, 0.0, 24.0, 1.0))[3]
            noise = rng.normal(0.0, 1.0, size=n_obs) * config.noise_std * max(scale, 1e-12)
            values = curve(j, times) + noise
            series[name] = [(float(t), float(v)) for t, v in zip(times, values)]
        for var in categorical:
            n_obs = rng.poisson(config.observation_rate * config.window_hours)
            if n_obs == 0:
                continue
            times = np.sort(rng.uniform(0.0, config.window_hours, size=n_obs))
            # Skewed toward the top level, like stable bedside scores.
            n_levels = len(var.levels)
            weights = np.arange(1, n_levels + 1, dtype=np.float64) ** 2
            weights /= weights.sum()
            picks = rng.choice(n_levels, size=n_obs, p=weights)
            series[var.name] = [(float(t), var.levels[p]) for t, p in zip(times, picks)]

        n_notes = max(1, int(rng.poisson(config.note_rate)))
        note_times = np.sort(rng.uniform(0.0, config.window_hours, size=n_notes))
        notes = []
        for t in note_times:
            centers = [o + 0.5 * config.motif_length_hours for o in onsets]
            nearest = int(np.argmin([abs(t - c) for c in centers]))
            vec = motifs[present[nearest]].note_vector + 0.25 * config.noise_std * rng.normal(
                size=config.note_embedding_dim
            )
            notes.append(NoteEvent(time=float(t), embedding=[float(x) for x in vec]))

        if config.label_rule == "motif-presence-binary":
            labels = LabelSet(task="binary", binary_label=int(0 in present))
        elif config.label_rule == "motif-timing-binary":
            labels = LabelSet(
                task="binary",
                binary_label=int(onsets[present.index(0)] < onsets[present.index(1)]),
            )
        else:
            multilabel = [int(l % config.n_motifs in present) for l in range(PHENOTYPE_COUNT)]
            labels = LabelSet(task="multilabel", multilabel=multilabel)

        rec_id = f"a-{adm:05d}"
        records.append(
            AdmissionRecord(
                id=rec_id,
                subject_id=f"s-{subject_of[adm]:05d}",
                window_hours=config.window_hours,
                series=series,
                notes=notes,
                labels=labels,
            )
        )
        truth[rec_id] = {
            "motifs": list(present),
            "intervals": [[float(o), float(o + config.motif_length_hours)] for o in onsets],
        }
    return records, truth
