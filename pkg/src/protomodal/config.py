"""Run configuration: YAML parsing with strict keys and documented defaults."""

from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SyntheticConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class GridSection:
    n_points: int = 24
    window_hours: float = 48.0


@dataclass
class DataSection:
    path: str | None = None
    variable_spec: str | None = None
    note_embedding_dim: int = 128
    note_embedder_seed: int = 0
    split_seed: int = 0
    split_ratios: tuple[float, float, float] = (0.70, 0.10, 0.20)
    synthetic: SyntheticConfig | None = None
    grid: GridSection = field(default_factory=GridSection)

    @property
    def note_dim(self) -> int:
        if self.synthetic is not None:
            return self.synthetic.note_embedding_dim
        return self.note_embedding_dim


@dataclass
class ModelSection:
    d_model: int = 128
    k_prototypes: int = 16
    time2vec_functions: int = 8
    time_dim: int = 16
    key_dim: int = 16
    temperature: float = 0.1
    slot_iterations: int = 3
    fusion_layers: int = 2
    fusion_heads: int = 4
    decoder_layers: int = 2
    decoder_heads: int = 4


@dataclass
class AblationCell:
    name: str
    toggles: tuple[str, ...] = ()
    overrides: dict = field(default_factory=dict)


@dataclass
class AblationSection:
    seeds: tuple[int, ...] = (0, 1, 2)
    cells: list[AblationCell] = field(default_factory=list)


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    ablation: AblationSection = field(default_factory=AblationSection)
    output_dir: str | None = None


def _type_name(annotation) -> str:
    return getattr(annotation, "__name__", str(annotation))


def _coerce(value, annotation, key: str):
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)

    if origin is typing.Union or origin is types.UnionType:
        if value is None and type(None) in args:
            return None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg, key)
            except ConfigError:
                continue
        raise ConfigError(f"{key}: expected {annotation}, got {value!r}")

    if dataclasses.is_dataclass(annotation):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {type(value).__name__}")
        return _build_dataclass(annotation, value, prefix=key + ".")

    if annotation is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key}: expected bool, got {value!r}")
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected int, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key}: expected float, got {value!r}")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)  # YAML reads "4e-5" as a string
            except ValueError:
                pass
        raise ConfigError(f"{key}: expected float, got {value!r}")
    if annotation is str:
        if isinstance(value, str):
            return value
        raise ConfigError(f"{key}: expected str, got {value!r}")

    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{key}[{i}]") for i, v in enumerate(value))
        if len(value) != len(args):
            raise ConfigError(f"{key}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{key}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{key}[{i}]") for i, v in enumerate(value)]
    if origin is dict or annotation is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping, got {value!r}")
        return dict(value)

    raise ConfigError(f"{key}: unsupported config type {_type_name(annotation)}")


def _build_dataclass(cls, mapping: dict, prefix: str = ""):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in mapping:
        if key not in names:
            raise ConfigError(f"unknown key {prefix + str(key)!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in mapping:
            kwargs[f.name] = _coerce(mapping[f.name], hints[f.name], prefix + f.name)
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def parse_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Load a YAML run config; missing file sections fall back to defaults.

    Unknown keys and type mismatches are errors. ``overrides`` is a nested
    mapping merged on top of the file contents (used by CLI flags).
    """
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = loaded
    if overrides:
        raw = _merge(raw, overrides)
    return _build_dataclass(RunConfig, raw)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def config_to_dict(config: RunConfig) -> dict:
    """Plain-JSON view of a run config (for echoing and hashing)."""

    def convert(value):
        if dataclasses.is_dataclass(value) and not isinstance(value, type):
            return {f.name: convert(getattr(value, f.name)) for f in dataclasses.fields(value)}
        if isinstance(value, tuple):
            return [convert(v) for v in value]
        if isinstance(value, list):
            return [convert(v) for v in value]
        if isinstance(value, dict):
            return {k: convert(v) for k, v in value.items()}
        return value

    return convert(config)


def echo_config(config: RunConfig, out_dir: str | Path) -> Path:
    """Write the fully resolved config for provenance; returns the path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "resolved_config.yaml"
    path.write_text(yaml.safe_dump(config_to_dict(config), sort_keys=False))
    return path


def model_config_from_run(config: RunConfig, n_variables: int, note_dim: int) -> ModelConfig:
    m = config.model
    return ModelConfig(
        n_variables=n_variables,
        note_dim=note_dim,
        d_model=m.d_model,
        k_prototypes=m.k_prototypes,
        time2vec_functions=m.time2vec_functions,
        time_dim=m.time_dim,
        key_dim=m.key_dim,
        temperature=m.temperature,
        slot_iterations=m.slot_iterations,
        fusion_layers=m.fusion_layers,
        fusion_heads=m.fusion_heads,
        decoder_layers=m.decoder_layers,
        decoder_heads=m.decoder_heads,
        task=config.train.model_task,
        grid_points=config.data.grid.n_points,
        window_hours=config.data.grid.window_hours,
    )


def dump_json(payload: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")
