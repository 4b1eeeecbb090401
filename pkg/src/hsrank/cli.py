"""Command-line entry point: train / eval / sweep / curve / ablate / inspect.

Exit codes: 0 success, 2 usage error, 3 data or format error, 4 training
or evaluation failure.  Every run prints a reproducibility stanza
(resolved config, seed, dataset fingerprint) and embeds it in file
outputs, so any result can be regenerated from its own header.

Configuration precedence: built-in defaults < ``--config`` JSON file <
explicit flags.  All randomness flows from ``--seed`` (a fixed constant
by default, never wall-clock).
"""

from __future__ import annotations

import argparse
import json
import os
import sys


from . import __version__
from . import rankers as rk
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ContractViolation,
    EvaluationError,
    FormatError,
    HsrankError,
    TrainingError,
    ValidationError,
)
from .evaluation import ablation_run, evaluate, scaling_curve
from .features import dataset_fingerprint, read_dataset, sample_groups, standardize_records
from .training import DEFAULT_SEED, TrainConfig, default_grid, grid_search, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_RUN = 4

_CONFIG_FLAGS = {
    "ranker": "ranker",
    "relevance": "relevance",
    "loss": "loss",
    "batch_size": "batch_size",
    "epochs": "epochs",
    "optimizer": "optimizer",
    "lr": "lr",
    "momentum": "momentum",
    "weight_decay": "weight_decay",
    "schedule": "schedule",
    "d_proj": "d_proj",
    "d_hidden": "d_hidden",
    "group_size": "group_size",
    "groups_per_query": "groups_per_query",
    "blocks": "blocks",
    "variant": "variant",
    "standardize": "standardize",
    "seed": "seed",
    "threads": "threads",
}


def _add_train_flags(parser: argparse.ArgumentParser, include_variant: bool = True) -> None:
    parser.add_argument("--config", help="JSON file of TrainConfig fields")
    parser.add_argument("--ranker", choices=rk.RANKER_KINDS)
    parser.add_argument("--relevance", choices=rk.RELEVANCE_KINDS)
    parser.add_argument("--loss", choices=("cls", "reg"))
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--optimizer", choices=("sgd", "adamw"))
    parser.add_argument("--lr", type=float)
    parser.add_argument("--momentum", type=float)
    parser.add_argument("--weight-decay", type=float, dest="weight_decay")
    parser.add_argument("--schedule", choices=("constant", "cosine"))
    parser.add_argument("--d-proj", type=int, dest="d_proj")
    parser.add_argument("--d-hidden", type=int, dest="d_hidden")
    parser.add_argument("--group-size", type=int, dest="group_size")
    parser.add_argument("--groups-per-query", type=int, dest="groups_per_query")
    parser.add_argument("--blocks", type=int)
    if include_variant:
        parser.add_argument("--variant", choices=rk.VARIANTS)
    parser.add_argument("--standardize", action="store_const", const=True, default=None)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--threads", type=int)


def _resolve_config(args: argparse.Namespace) -> TrainConfig:
    """defaults < --config file < explicit flags."""
    merged = TrainConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                merged.update(json.load(fh))
            except json.JSONDecodeError as exc:
                raise FormatError(f"config file is not valid JSON: {exc}") from exc
    for flag, field in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field] = value
    if merged.get("threads") in (None, 1) and os.environ.get("LR_THREADS"):
        merged["threads"] = int(os.environ["LR_THREADS"])
    config = TrainConfig.from_dict(merged)
    config.validate()
    return config


def _stanza(command: str, config: TrainConfig | None, seed: int, fingerprints: dict) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config.to_dict() if config is not None else None,
        "datasets": fingerprints,
    }


def _emit(stanza: dict) -> None:
    print(json.dumps({"reproducibility": stanza}, indent=2, sort_keys=True))


def _load_data(path: str):
    records, meta = read_dataset(path)
    return records, meta, dataset_fingerprint(records, meta)


def _write_json(path: str, payload: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


# -- subcommands -------------------------------------------------------------


def _cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    records, meta, fingerprint = _load_data(args.data)
    ckpt, log = train(config, records, meta)
    save_checkpoint(ckpt, args.out)
    stanza = _stanza("train", config, config.seed, {args.data: fingerprint})
    stanza["output"] = args.out
    stanza["final_batch_loss"] = log.final_batch_loss
    stanza["batches"] = len(log.batch_losses)
    stanza["aborted_steps"] = log.aborted_steps
    stanza["train_seconds"] = round(log.duration_seconds, 3)
    _emit(stanza)
    print(f"saved checkpoint: {ckpt.describe()} -> {args.out}")
    return EXIT_OK


def _eval_groups(ckpt, records, meta, group_size, groups_per_query, seed):
    if ckpt.feature_norm is not None:
        mean, std = ckpt.feature_norm
        records = standardize_records(records, mean, std)
    groups, stats = sample_groups(records, group_size, groups_per_query, meta.label_mode, seed)
    if not groups:
        raise EvaluationError(f"no evaluable groups after sampling ({stats})")
    return groups, stats


def _cmd_eval(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records, meta, fingerprint = _load_data(args.data)
    if meta.d_model != ckpt.d_model:
        raise ContractViolation(
            f"dataset d_model {meta.d_model} != checkpoint d_model {ckpt.d_model}"
        )
    groups, stats = _eval_groups(
        ckpt, records, meta, args.group_size, args.groups_per_query, args.seed
    )
    report = evaluate(
        ckpt,
        groups,
        meta.label_mode,
        dataset_id=fingerprint[:12],
        ranker_id=ckpt.describe(),
        threads=args.threads or 1,
        protocol={
            "group_size": args.group_size,
            "groups_per_query": args.groups_per_query,
            "seed": args.seed,
            "filter": meta.label_mode,
            "sample_stats": str(stats),
        },
    )
    stanza = _stanza("eval", None, args.seed, {args.data: fingerprint})
    stanza["checkpoint"] = args.ckpt
    if args.out:
        _write_json(args.out, {"reproducibility": stanza, "report": report.to_dict()})
    _emit(stanza)
    print(report.to_table())
    return EXIT_OK


def _cmd_sweep(args: argparse.Namespace) -> int:
    base = _resolve_config(args)
    records, meta, fingerprint = _load_data(args.data)
    if args.grid != "default":
        raise ContractViolation(f"unknown grid {args.grid!r} (only 'default' is defined)")
    grid = default_grid(base)
    best, results = grid_search(
        grid, records, meta, held_out_fraction=args.holdout, seed=base.seed
    )
    stanza = _stanza("sweep", base, base.seed, {args.data: fingerprint})
    stanza["grid_points"] = len(grid)
    stanza["holdout_fraction"] = args.holdout
    payload = {"reproducibility": stanza, "best_config": best.to_dict(), "results": results}
    if args.out:
        _write_json(args.out, payload)
    _emit(stanza)
    ok = [r for r in results if "accuracy" in r]
    print(f"grid points: {len(results)} (failures: {len(results) - len(ok)})")
    if ok:
        accs = [r["accuracy"] for r in ok]
        print(f"accuracy range: {min(accs):.4f} .. {max(accs):.4f}")
    print("best config: " + json.dumps(best.to_dict(), sort_keys=True))
    return EXIT_OK


def _cmd_curve(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records, meta, fingerprint = _load_data(args.data)
    try:
        k_values = [int(part) for part in args.k.split(",") if part.strip()]
    except ValueError as exc:
        raise ContractViolation(f"--k must be a comma-separated integer list: {exc}") from exc
    curve = scaling_curve(
        ckpt, records, k_values, trials_per_k=args.trials, seed=args.seed,
        label_mode=meta.label_mode,
    )
    stanza = _stanza("curve", None, args.seed, {args.data: fingerprint})
    stanza["checkpoint"] = args.ckpt
    stanza["k_values"] = k_values
    stanza["trials_per_k"] = args.trials
    stanza["protocol"] = curve.protocol
    if curve.skipped:
        print(f"warning: skipped K values beyond the smallest pool: {curve.skipped}", file=sys.stderr)
    if args.out:
        tmp = args.out + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for line in json.dumps({"reproducibility": stanza}, sort_keys=True).splitlines():
                fh.write(f"# {line}\n")
            fh.write(curve.to_csv())
        os.replace(tmp, args.out)
    _emit(stanza)
    print(curve.to_csv(), end="")
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    records, meta, fingerprint = _load_data(args.data)
    report = ablation_run(args.ablation_variant, config, records, meta, args.holdout)
    stanza = _stanza("ablate", config, config.seed, {args.data: fingerprint})
    stanza["variant"] = args.ablation_variant
    if args.out:
        _write_json(args.out, {"reproducibility": stanza, "report": report.to_dict()})
    _emit(stanza)
    print(report.to_table())
    return EXIT_OK


def _cmd_inspect(args: argparse.Namespace) -> int:
    ckpt = load_checkpoint(args.ckpt)
    print(f"ranker kind        {ckpt.ranker_kind}")
    print(f"relevance kind     {ckpt.relevance_kind}")
    print(f"variant            {ckpt.variant}")
    print(f"d_model            {ckpt.d_model}")
    print(f"d_proj             {ckpt.d_proj}")
    print(f"d_hidden           {ckpt.d_hidden}")
    print(f"blocks             {ckpt.block_count}")
    print(f"parameter_count    {ckpt.parameter_count():,}")
    print(f"dataset_fingerprint {ckpt.dataset_fingerprint}")
    print(f"tensors            {len(ckpt.tensors)}")
    if args.tensors:
        for name, tensor in ckpt.tensors.items():
            print(f"  {name}  shape={tuple(tensor.shape)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsrank",
        description="Train, evaluate and inspect best-of-K response rerankers "
        "over cached hidden-state features.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a ranker on an LRFD dataset")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True)
    _add_train_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_eval = sub.add_parser("eval", help="best-of-K selection accuracy of a checkpoint")
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--group-size", type=int, default=10, dest="group_size")
    p_eval.add_argument("--groups-per-query", type=int, default=16, dest="groups_per_query")
    p_eval.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_eval.add_argument("--threads", type=int, default=int(os.environ.get("LR_THREADS", "1")))
    p_eval.add_argument("--out", help="write the JSON report here")
    p_eval.set_defaults(func=_cmd_eval)

    p_sweep = sub.add_parser("sweep", help="grid search over the standard hyperparameters")
    p_sweep.add_argument("--data", required=True)
    p_sweep.add_argument("--grid", default="default")
    p_sweep.add_argument("--holdout", type=float, default=0.1)
    p_sweep.add_argument("--out", help="write the JSON results table here")
    _add_train_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_curve = sub.add_parser("curve", help="selection accuracy as K grows")
    p_curve.add_argument("--ckpt", required=True)
    p_curve.add_argument("--data", required=True)
    p_curve.add_argument("--k", default="1,2,4,8,10,16")
    p_curve.add_argument("--trials", type=int, default=8)
    p_curve.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p_curve.add_argument("--out", help="write CSV (K,mean,std) here")
    p_curve.set_defaults(func=_cmd_curve)

    p_ablate = sub.add_parser("ablate", help="train and evaluate an architecture variant")
    p_ablate.add_argument("--variant", required=True, choices=rk.VARIANTS, dest="ablation_variant")
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--holdout", type=float, default=0.1)
    p_ablate.add_argument("--out", help="write the JSON report here")
    _add_train_flags(p_ablate, include_variant=False)
    p_ablate.set_defaults(func=_cmd_ablate)

    p_inspect = sub.add_parser("inspect", help="print a checkpoint's kinds, dims and size")
    p_inspect.add_argument("--ckpt", required=True)
    p_inspect.add_argument("--tensors", action="store_true", help="also list tensor shapes")
    p_inspect.set_defaults(func=_cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (FormatError, ValidationError, ContractViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN
    except HsrankError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
