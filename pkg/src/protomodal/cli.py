"""Command-line entry point: one verb per pipeline stage."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .ablation import embedding_cells, lambda_grid_cells, loss_cells, prototype_count_cells, run_ablation
from .config import (
    ConfigError,
    RunConfig,
    config_to_dict,
    dump_json,
    echo_config,
    model_config_from_run,
    parse_config,
)
from .data import (
    NormStats,
    load_admissions,
    load_variable_spec,
    motif_sidecar_path,
    save_admissions,
    save_motif_truth,
    save_variable_spec,
)
from .gradcheck import COMPONENTS, GradCheckError, finite_diff_gradcheck
from .metrics import MetricsReport
from .pipeline import items_for_split, load_or_generate, prepare_data
from .report import export_prototype_report, render_history_figure
from .training import (
    TrainConfig,
    evaluate_model,
    load_checkpoint,
    save_checkpoint,
    train_model,
)


def _fail(message: str) -> int:
    sys.stderr.write(json.dumps({"error": message}) + "\n")
    return 1


def _load_config(args) -> RunConfig:
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides["train"] = {"seed": args.seed}
    config = parse_config(args.config, overrides)
    if getattr(args, "out", None):
        config.output_dir = args.out
    return config


def cmd_generate(args) -> int:
    config = _load_config(args)
    if config.data.synthetic is None:
        raise ConfigError("generate needs a data.synthetic section")
    if args.seed is not None:
        config.data.synthetic.seed = args.seed
    records, variables, truth = load_or_generate(config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    admissions_path = out_dir / "admissions.jsonl"
    save_admissions(records, admissions_path)
    save_motif_truth(truth or {}, motif_sidecar_path(admissions_path))
    save_variable_spec(variables, out_dir / "variables.json")
    echo_config(config, out_dir)
    print(
        json.dumps(
            {
                "admissions": str(admissions_path),
                "ground_truth": str(motif_sidecar_path(admissions_path)),
                "n_records": len(records),
            }
        )
    )
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(config, out_dir)
    prepared = prepare_data(config)
    model_config = model_config_from_run(
        config, n_variables=len(prepared.variables), note_dim=prepared.note_dim
    )
    log = print if not args.quiet else None
    result = train_model(
        model_config, prepared.train_items, prepared.val_items, config.train, log=log
    )
    val_report = evaluate_model(result.model, prepared.val_items, prepared.val_items)
    history_path = out_dir / "history.csv"
    result.history.write_csv(history_path)
    manifest = save_checkpoint(
        out_dir / "checkpoint.pt",
        result.model,
        config.train,
        config_to_dict(config),
        prepared.stats.to_dict(),
        result.history,
        val_report,
    )
    if args.plots:
        render_history_figure(history_path, out_dir / "history.png")
    print(json.dumps({"checkpoint": str(out_dir / "checkpoint.pt"), **manifest["val_metrics"]}))
    return 0


def cmd_eval(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    config = parse_config(None, payload["run_config"])
    stats = NormStats.from_dict(payload["norm_stats"])
    prepared = prepare_data(config, stats=stats)
    target = items_for_split(prepared, args.split)
    report = evaluate_model(payload["model"], prepared.val_items, target)
    out = {"split": args.split, **report.to_dict()}
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_json(out, out_dir / f"metrics_{args.split}.json")
    print(json.dumps({k: v for k, v in out.items() if k != "per_label"}))
    return 0


_GRID_SHORTCUTS = {
    "embeddings": embedding_cells,
    "losses": loss_cells,
    "lambda": lambda_grid_cells,
    "prototype-count": prototype_count_cells,
}


def cmd_ablate(args) -> int:
    config = _load_config(args)
    cells = list(config.ablation.cells)
    if args.grid:
        if args.grid not in _GRID_SHORTCUTS:
            raise ConfigError(f"unknown grid {args.grid!r}; options: {sorted(_GRID_SHORTCUTS)}")
        cells = _GRID_SHORTCUTS[args.grid]() + cells
    if not cells:
        raise ConfigError("no ablation cells: give --grid or an ablation.cells section")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo_config(config, out_dir)
    log = print if not args.quiet else None
    result = run_ablation(config, cells, seeds=tuple(config.ablation.seeds), out_dir=out_dir, log=log)
    print(json.dumps({"cells": len(cells), "rows": len(result["rows"]), "out": str(out_dir)}))
    return 0


def cmd_gradcheck(args) -> int:
    names = args.components.split(",") if args.components else list(COMPONENTS)
    reports = []
    worst_overall = 0.0
    failed = []
    for name in names:
        try:
            report = finite_diff_gradcheck(name.strip(), seed=args.seed or 0)
        except GradCheckError as exc:
            failed.append(name)
            print(f"FAIL {name}: {exc}")
            continue
        reports.append(report)
        worst_overall = max(worst_overall, report.max_rel_error)
        status = "ok" if report.ok else "FAIL"
        print(
            f"{status} {report.component}: max {report.max_rel_error:.3e} "
            f"mean {report.mean_rel_error:.3e} over {report.n_coordinates} coordinates"
        )
        if not report.ok:
            failed.append(name)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        dump_json(
            {
                "max_rel_error": worst_overall,
                "components": [
                    {
                        "component": r.component,
                        "max_rel_error": r.max_rel_error,
                        "mean_rel_error": r.mean_rel_error,
                        "n_coordinates": r.n_coordinates,
                    }
                    for r in reports
                ],
                "failed": failed,
            },
            out_dir / "gradcheck.json",
        )
    if failed:
        return _fail(f"gradient check failed for: {', '.join(failed)}")
    return 0


def cmd_export_prototypes(args) -> int:
    payload = load_checkpoint(args.checkpoint)
    config = parse_config(None, payload["run_config"])
    stats = NormStats.from_dict(payload["norm_stats"])
    if config.data.variable_spec is not None:
        variables = load_variable_spec(config.data.variable_spec)
    else:
        from .data import default_clinical_variables

        variables = default_clinical_variables()
    records = load_admissions(args.data, variables)
    ids = args.ids.split(",") if args.ids else None
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = export_prototype_report(
        payload["model"],
        records,
        variables,
        stats,
        out_dir / "prototype_report.jsonl",
        ids=ids,
        plots=args.plots,
        note_embedder_seed=config.data.note_embedder_seed,
    )
    print(json.dumps({"report": str(out_dir / "prototype_report.jsonl"), "admissions": len(rows)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="protomodal",
        description="Prototype-based cross-modal temporal pattern model: data, training, analysis.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic admissions dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--plots", action="store_true", help="render history figures")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--grid", default=None, help="embeddings | losses | lambda | prototype-count")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--components", default=None, help="comma-separated; default all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-prototypes", help="attention report for admissions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="admissions JSONL file")
    p.add_argument("--ids", default=None, help="comma-separated admission ids")
    p.add_argument("--out", required=True)
    p.add_argument("--plots", action="store_true")
    p.set_defaults(func=cmd_export_prototypes)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        return _fail(f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
