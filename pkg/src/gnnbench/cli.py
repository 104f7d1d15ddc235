"""Command-line entry point: ``gnnbench {prepare,train,benchmark,grid-search,report}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from . import __version__
from .config import apply_overrides, load_plan, plan_from_dict
from .errors import GnnBenchError, TrialError, UsageError
from .graph import dataset_stats, preprocess
from .helpers import ensure_writable_dir, resolve_workers
from .models import ModelKind
from .propagation import label_propagate
from .protocol import (
    ExperimentPlan,
    GridSpace,
    SplitMode,
    generate_split,
    grid_search,
    load_fixed_split,
    prepare_datasets,
    read_results_csv,
    run_experiment,
    write_results,
)
from .report import split_sensitivity_report, summarize, write_report
from .rng import RngStream
from .storage import load_dataset, save_dataset
from .trainer import train

__all__ = ["build_parser", "main"]

logger = logging.getLogger("gnnbench")

_HANDLER_NAME = "gnnbench-cli"


# --------------------------------------------------------------------------- #
# Pretty failure printer
# --------------------------------------------------------------------------- #
def _print_failure(msg: str) -> None:
    header = "=" * 70
    print(f"\n{header}\n[ERROR] {msg}\n{header}\n", file=sys.stderr)  # noqa: T201


def _setup_logging(verbose: bool) -> None:
    root = logging.getLogger("gnnbench")
    for handler in list(root.handlers):
        if handler.get_name() == _HANDLER_NAME:
            root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.set_name(_HANDLER_NAME)
    handler.setFormatter(logging.Formatter("%(levelname)-7s %(message)s"))
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------- #
# Commands
# --------------------------------------------------------------------------- #
def cmd_prepare(args: argparse.Namespace) -> int:
    """Preprocess a raw bundle into a container with provenance and statistics."""
    out = ensure_writable_dir(args.out)
    raw = load_dataset(args.input)
    if args.name:
        raw = dataclasses.replace(raw, name=args.name)
    if args.feature_norm:
        raw = dataclasses.replace(raw, feature_norm=True)
    result = preprocess(raw, min_class_count=args.min_class_count)
    save_dataset(result.dataset, out)
    (out / "provenance.json").write_text(
        json.dumps([dataclasses.asdict(r) for r in result.provenance], indent=2) + "\n",
        encoding="utf-8",
    )
    stats = dataclasses.asdict(dataset_stats(result.dataset))
    with (out / "stats.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["dataset", *stats])
        writer.writerow([result.dataset.name, *(stats.values())])
    logger.info(
        "Prepared %s: %s nodes, %s classes, %s edges -> %s",
        result.dataset.name,
        stats["nodes"],
        stats["classes"],
        stats["edges"],
        out,
    )
    return 0


def _plan(args: argparse.Namespace) -> ExperimentPlan:
    if not args.config:
        raise UsageError(f"{args.command} needs --config")
    plan = load_plan(args.config, args.override)
    if args.seed is not None:
        plan = dataclasses.replace(plan, experiment_seed=args.seed)
    if args.split_mode is not None:
        plan = dataclasses.replace(plan, split_mode=SplitMode(args.split_mode))
    return plan


def cmd_train(args: argparse.Namespace) -> int:
    """Run one (model, dataset, split, init) trial and print its outcome as JSON."""
    doc: dict[str, Any] = {
        "datasets": [str(Path(args.dataset).resolve())],
        "models": [{"kind": args.model}],
        "num_splits": 1,
        "num_inits": 1,
        "experiment_seed": args.seed if args.seed is not None else 0,
    }
    if args.fixed_split:
        doc["fixed_split"] = str(Path(args.fixed_split).resolve())
    if args.split_mode is not None:
        doc["split_mode"] = args.split_mode
    plan = plan_from_dict(apply_overrides(doc, args.override))
    (ds,) = prepare_datasets(plan)
    spec = plan.models[0]
    if plan.fixed_split is not None:
        split = load_fixed_split(plan.fixed_split, ds.num_nodes)
    else:
        split = generate_split(ds, plan.experiment_seed, args.split_id, plan.split_mode)
    payload: dict[str, Any] = {
        "dataset": ds.name,
        "model": str(spec.kind),
        "split_id": args.split_id,
        "init_id": args.init_id,
        "config": spec.to_dict(),
    }
    if spec.trainable:
        rng = RngStream.derive(
            plan.experiment_seed, ds.name, str(spec.kind), args.split_id, args.init_id
        )
        outcome = train(spec, ds, split, plan.train_config, rng)
        payload.update(outcome.to_dict())
    else:
        assert spec.propagation is not None
        preds = label_propagate(ds, split, spec.propagation)
        payload["test_accuracy"] = float((preds[split.test] == ds.labels[split.test]).mean())
        payload["val_accuracy"] = float((preds[split.val] == ds.labels[split.val]).mean())
    print(json.dumps(payload, indent=2))  # noqa: T201
    return 0


def cmd_benchmark(args: argparse.Namespace) -> int:
    """Run a full plan and write results plus summaries."""
    out = ensure_writable_dir(args.out)
    plan = _plan(args)
    table = run_experiment(plan, workers=resolve_workers(args.workers))
    write_results(table, out)
    if table.failures:
        logger.warning("%s trial(s) failed; see results.json", len(table.failures))
    if table.num_succeeded == 0:
        raise TrialError("no trial succeeded")
    write_report(table, out)
    logger.info("Summary:\n%s", summarize(table).to_text())
    return 0


def cmd_grid_search(args: argparse.Namespace) -> int:
    """Search every trainable model of the plan and write ``<kind>/best_config.json``."""
    out = ensure_writable_dir(args.out)
    plan = _plan(args)
    datasets = prepare_datasets(plan)
    grid = plan.grid or GridSpace()
    workers = resolve_workers(args.workers)
    kinds = [m.kind for m in plan.models if m.trainable]
    if not kinds:
        raise UsageError("the plan names no trainable model to search")
    for kind in kinds:
        result = grid_search(
            datasets,
            kind,
            grid,
            plan.search_splits,
            plan.search_inits,
            experiment_seed=plan.experiment_seed,
            train_config=plan.train_config,
            workers=workers,
            split_mode=plan.split_mode,
        )
        target = ensure_writable_dir(out / str(kind)) / "best_config.json"
        target.write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
        logger.info("%s: best %s (val %.4f)", kind, result.best.to_dict(), result.ranking[0].score)
    return 0


def _regime(item: str, index: int) -> tuple[str, Path]:
    name, sep, path = item.partition("=")
    return (name, Path(path)) if sep else (f"regime{index}", Path(item))


def cmd_report(args: argparse.Namespace) -> int:
    """Regenerate summaries from ``results.csv``; compare regimes when several are given."""
    regimes = [_regime(item, i) for i, item in enumerate(args.results)]
    tables = {name: read_results_csv(path) for name, path in regimes}
    first_name, first_path = regimes[0]
    out = ensure_writable_dir(args.out or first_path.parent)
    table = tables[first_name]
    write_report(table, out)
    logger.info("Summary:\n%s", summarize(table).to_text())
    if len(tables) > 1:
        flips = split_sensitivity_report(tables)
        doc = [
            {"dataset": f.dataset, "rankings": f.rankings, "top": f.top, "flip": f.flip}
            for f in flips
        ]
        (out / "split_sensitivity.json").write_text(
            json.dumps(doc, indent=2) + "\n", encoding="utf-8"
        )
        for f in flips:
            logger.info("%s: top %s%s", f.dataset, f.top, " (ranking flip)" if f.flip else "")
    return 0


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #
def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one sub-command per operation."""
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON experiment plan")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes (env GNNBENCH_WORKERS)")
    common.add_argument("--seed", type=int, help="experiment seed (overrides the plan)")
    common.add_argument(
        "--split-mode",
        choices=[str(m) for m in SplitMode],
        help="random split scheme (overrides the plan)",
    )
    common.add_argument(
        "--override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. train_config.max_epochs=200",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = _Parser(prog="gnnbench", description="Benchmark GNN node classifiers.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", parents=[common], help="preprocess a raw dataset")
    p.add_argument("--input", required=True, help="text bundle or container directory")
    p.add_argument("--min-class-count", type=int, default=50)
    p.add_argument("--name", help="dataset name (default: input directory name)")
    p.add_argument("--feature-norm", action="store_true", help="flag L1 feature normalization")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="run a single trial")
    p.add_argument("--dataset", required=True, help="prepared container directory")
    p.add_argument("--model", required=True, choices=[str(k) for k in ModelKind])
    p.add_argument("--split-id", type=int, default=0)
    p.add_argument("--init-id", type=int, default=0)
    p.add_argument("--fixed-split", help="split file replacing the random split")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("benchmark", parents=[common], help="run an experiment plan")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("grid-search", parents=[common], help="tune hyperparameters")
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("report", parents=[common], help="summarize results.csv files")
    p.add_argument(
        "--results",
        action="append",
        required=True,
        metavar="[NAME=]PATH",
        help="results.csv; repeat to compare split regimes",
    )
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Parse ``argv``, run the command and map errors to exit codes."""
    try:
        args = build_parser().parse_args(argv)
        _setup_logging(args.verbose)
        if args.command in ("prepare", "benchmark", "grid-search") and not args.out:
            raise UsageError(f"{args.command} needs --out")
        return int(args.func(args))
    except GnnBenchError as e:
        _print_failure(str(e))
        return e.exit_code
    except OSError as e:
        _print_failure(f"I/O failure: {e}")
        return 2
