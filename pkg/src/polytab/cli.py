"""Command-line surface: split, pretrain, finetune, generate, evaluate, ablation.

Every command takes an optional INI config file; explicit flags win over file
values, and all randomness flows from one root seed expanded per stage.
Artifacts are written atomically (temp file, then rename). The checkpoint
root can be overridden with the POLYTAB_CHECKPOINT_ROOT environment variable.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile

from . import data as data_mod
from .config import build_training_config, load_config_file
from .data import DataError, SplitSpec, load_csv, load_schema_descriptor
from .evaluation import evaluate_all
from .numeric import TrainingDiagnosticError
from .pipeline import (
    CheckpointBundle,
    GenerationRequest,
    TrainingConfig,
    finetune,
    generate,
    pretrain,
    run_ablation,
)

CHECKPOINT_ROOT_ENV = "POLYTAB_CHECKPOINT_ROOT"


def _resolve_checkpoint(path: str) -> str:
    root = os.environ.get(CHECKPOINT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _atomic_json(payload: dict, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _atomic_csv(table, path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    os.close(fd)
    try:
        data_mod.write_csv(tmp, table)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _table_arg(value: str):
    """Parse 'table.csv:descriptor.json' into a loaded TableDataset."""
    if ":" not in value:
        raise argparse.ArgumentTypeError(
            f"expected CSV:DESCRIPTOR, got {value!r}")
    csv_path, desc_path = value.rsplit(":", 1)
    return load_csv(csv_path, load_schema_descriptor(desc_path))


def _training_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training overrides")
    group.add_argument("--seed", type=int, default=None, help="root seed expanded per stage")
    group.add_argument("--ae-epochs", type=int, default=None)
    group.add_argument("--aggregator-epochs", type=int, default=None)
    group.add_argument("--decoder-epochs", type=int, default=None)
    group.add_argument("--diffusion-epochs", type=int, default=None)
    group.add_argument("--finetune-epochs", type=int, default=None)
    group.add_argument("--timesteps", type=int, default=None)
    group.add_argument("--temperature", type=float, default=None)
    group.add_argument("--magnitude-weight", type=float, default=None)
    group.add_argument("--corrupted-views", type=int, default=None)
    group.add_argument("--mask-fraction", type=float, default=None)
    group.add_argument("--drop-rate", type=float, default=None)
    group.add_argument("--beta-min", type=float, default=None)
    group.add_argument("--beta-max", type=float, default=None)
    group.add_argument("--schedule-kind", choices=["linear", "cosine"], default=None)
    group.add_argument("--uncon-rate", type=float, default=None)
    group.add_argument("--guidance-scale", type=float, default=None)
    group.add_argument("--condition-mode", choices=["metadata-only", "metadata+features"],
                       default=None)
    group.add_argument("--diffusion-hidden", type=int, default=None)


def _collect_training(args) -> TrainingConfig:
    file_values = load_config_file(args.config) if args.config else None
    flags = {
        "seed": args.seed,
        "ae_epochs": args.ae_epochs,
        "aggregator_epochs": args.aggregator_epochs,
        "decoder_epochs": args.decoder_epochs,
        "diffusion_epochs": args.diffusion_epochs,
        "finetune_epochs": args.finetune_epochs,
        "timesteps": args.timesteps,
        "temperature": args.temperature,
        "magnitude_weight": args.magnitude_weight,
        "corrupted_views": args.corrupted_views,
        "mask_fraction": args.mask_fraction,
        "drop_rate": args.drop_rate,
        "beta_min": args.beta_min,
        "beta_max": args.beta_max,
        "schedule_kind": args.schedule_kind,
        "uncon_rate": args.uncon_rate,
        "guidance_scale": args.guidance_scale,
        "condition_mode": args.condition_mode,
        "diffusion_hidden": args.diffusion_hidden,
    }
    return build_training_config(file_values, flags)


def cmd_split(args) -> int:
    descriptor = load_schema_descriptor(args.descriptor)
    table = load_csv(args.input, descriptor)
    spec = SplitSpec(args.train_frac, args.finetune_frac, args.test_frac, args.seed)
    train_idx, fin_idx, test_idx = data_mod.split_indices(table.n_rows, spec)
    train, fin, test = (table.take_rows(train_idx), table.take_rows(fin_idx),
                        table.take_rows(test_idx))
    os.makedirs(args.outdir, exist_ok=True)
    splits = {"train": train_idx, "finetune": fin_idx, "test": test_idx}
    extra: dict = {"source": args.input}
    outputs = {"train": train, "finetune": fin, "test": test}
    if table.target_index is not None and table.n_columns >= 3:
        fin_a, fin_b = data_mod.split_features(fin, seed=args.seed)
        test_a = test.select_columns([test.column_index(n) for n in fin_a.column_names])
        test_b = test.select_columns([test.column_index(n) for n in fin_b.column_names])
        outputs.update({"finetune_a": fin_a, "finetune_b": fin_b,
                        "test_a": test_a, "test_b": test_b})
        extra["feature_split"] = {
            "seed": args.seed,
            "set_a": list(fin_a.column_names),
            "set_b": list(fin_b.column_names),
        }
    for name, subset in outputs.items():
        _atomic_csv(subset, os.path.join(args.outdir, f"{name}.csv"))
        desc = data_mod.descriptor_for(subset)
        for col_desc, col in zip(desc["columns"], subset.columns):
            if col.kind == data_mod.CATEGORICAL:
                col_desc["categories"] = list(col.categories)
        _atomic_json(desc, os.path.join(args.outdir, f"{name}.descriptor.json"))
    manifest_path = os.path.join(args.outdir, "split_manifest.json")
    payload = {
        "train_frac": spec.train_frac,
        "finetune_frac": spec.finetune_frac,
        "test_frac": spec.test_frac,
        "seed": spec.seed,
        "row_indices": splits,
    }
    payload.update(extra)
    _atomic_json(payload, manifest_path)
    print(f"wrote splits to {args.outdir}")
    return 0


def cmd_pretrain(args) -> int:
    config = _collect_training(args)
    tables = [_table_arg(spec) for spec in args.tables]
    bundle = pretrain(tables, config)
    out = _resolve_checkpoint(args.out)
    bundle.save(out)
    print(f"checkpoint written to {out}")
    return 0


def cmd_finetune(args) -> int:
    bundle = CheckpointBundle.load(_resolve_checkpoint(args.checkpoint))
    table = _table_arg(args.table)
    tuned = finetune(bundle, table, epochs=args.finetune_epochs, seed=args.seed)
    out = _resolve_checkpoint(args.out)
    tuned.save(out)
    print(f"fine-tuned checkpoint written to {out}")
    return 0


def cmd_generate(args) -> int:
    bundle = CheckpointBundle.load(_resolve_checkpoint(args.checkpoint))
    metadata = args.metadata
    columns = args.columns.split(",") if args.columns else None
    if metadata is None or columns is None:
        if bundle.finetune is not None:
            metadata = metadata or bundle.finetune.metadata
            columns = columns or [c.name for c in bundle.finetune.columns]
        else:
            print("error: --metadata and --columns are required without a fine-tuned bundle",
                  file=sys.stderr)
            return 2
    request = GenerationRequest(
        scheme=args.scheme,
        metadata=metadata,
        n_rows=args.n_rows,
        columns=tuple(columns),
        seed=args.seed,
        guidance_scale=args.guidance_scale,
    )
    synth = generate(bundle, request)
    _atomic_csv(synth, args.out)
    config_snapshot = {
        "scheme": request.scheme, "metadata": request.metadata,
        "n_rows": request.n_rows, "columns": list(request.columns),
        "seed": request.seed, "guidance_scale": request.guidance_scale,
        "checkpoint": args.checkpoint,
    }
    _atomic_json(config_snapshot, args.out + ".request.json")
    print(f"synthetic table written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    real = _table_arg(args.real)
    synth_desc = load_schema_descriptor(args.synth_descriptor) if args.synth_descriptor \
        else data_mod.descriptor_for(real)
    synth = load_csv(args.synth, synth_desc)
    train = _table_arg(args.train) if args.train else None
    report = evaluate_all(
        real, synth, real_train=train, seed=args.seed,
        real_id=args.real, synth_id=args.synth,
        with_tstr=not args.skip_tstr,
    )
    _atomic_json(report.to_dict(), args.out)
    print(report.format_table())
    print(f"report written to {args.out}")
    return 0


def cmd_ablation(args) -> int:
    config = _collect_training(args)
    tables = [_table_arg(spec) for spec in args.tables]
    finetune_table = _table_arg(args.finetune_table)
    test_table = _table_arg(args.test_table)
    if args.checkpoint:
        bundle = CheckpointBundle.load(_resolve_checkpoint(args.checkpoint))
    else:
        bundle = pretrain(tables, config)
    report = run_ablation(
        bundle, finetune_table, test_table,
        finetune_epochs=args.finetune_epochs or 200,
        decoder_epochs=args.decoder_epochs or 200,
        seed=config.seed,
    )
    report["config"] = config.to_dict()
    _atomic_json(report, args.out)
    print("variant".ljust(55), "acc", "pct", "dcr", "schema_valid")
    for name, scores in report["variants"].items():
        print(name.ljust(55),
              f"{scores.get('accuracy', float('nan')):.3f}",
              f"{scores['pct']:.3f}", f"{scores['dcr_median']:.3f}",
              scores["schema_valid"])
    print(f"ablation report written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="polytab",
        description="Cross-table synthetic data: pre-train once, generate for any known table.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="split a CSV into train/finetune/test and feature subsets")
    p.add_argument("--input", required=True, help="source CSV")
    p.add_argument("--descriptor", required=True, help="schema descriptor JSON")
    p.add_argument("--train-frac", type=float, default=0.70)
    p.add_argument("--finetune-frac", type=float, default=0.05)
    p.add_argument("--test-frac", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("pretrain", help="pre-train all components on pooled tables")
    p.add_argument("--tables", nargs="+", required=True, metavar="CSV:DESCRIPTOR")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--config", default=None, help="INI config file")
    _training_flags(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="fine-tune the diffusion net on one table")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--table", required=True, metavar="CSV:DESCRIPTOR")
    p.add_argument("--out", required=True)
    p.add_argument("--finetune-epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("generate", help="sample a synthetic table from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scheme", choices=["finetuned", "cond_gen", "cond_aug"],
                   default="finetuned")
    p.add_argument("--metadata", default=None, help="target table context text")
    p.add_argument("--columns", default=None, help="comma-separated column names")
    p.add_argument("--n-rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--guidance-scale", type=float, default=1.0)
    p.add_argument("--out", required=True, help="output CSV")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score a synthetic table against real data")
    p.add_argument("--real", required=True, metavar="CSV:DESCRIPTOR", help="holdout test table")
    p.add_argument("--synth", required=True, help="synthetic CSV")
    p.add_argument("--synth-descriptor", default=None,
                   help="descriptor for the synthetic CSV (defaults to the real table's)")
    p.add_argument("--train", default=None, metavar="CSV:DESCRIPTOR",
                   help="training table for diversity metrics")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--skip-tstr", action="store_true")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablation", help="run the four-component comparison on one table")
    p.add_argument("--tables", nargs="+", required=True, metavar="CSV:DESCRIPTOR",
                   help="pre-training tables")
    p.add_argument("--finetune-table", required=True, metavar="CSV:DESCRIPTOR")
    p.add_argument("--test-table", required=True, metavar="CSV:DESCRIPTOR")
    p.add_argument("--checkpoint", default=None,
                   help="reuse an existing pre-trained checkpoint")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--config", default=None)
    _training_flags(p)
    p.set_defaults(func=cmd_ablation)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, TrainingDiagnosticError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
