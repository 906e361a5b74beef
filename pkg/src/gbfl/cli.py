"""Command-line entry point: ``python -m gbfl <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error (bad flags, missing or
invalid config) and 2 when a stage fails at runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .blackbox import load_model, save_model
from .clauses import ClauseEvaluator, format_rules, generate_clauses, load_clauses, save_clauses
from .data import derive_base_values, derive_bounds, load_csv, save_csv, split
from .errors import GBFLError
from .explainer import explain_dataset, load_explanations, save_explanations
from .gridding import generate_grid, load_grid, save_grid
from .learners import TransparentModel, fit_logistic_l1, fit_tree
from .metrics import evaluate_transparent
from .pipeline import PipelineConfig, RunReport, build_blackbox, emit_report, render_markdown, run_pipeline


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="random seed (default 0)")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory")
    p.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="gbfl", parents=[common],
                     description="Transparent proxy models from local contrastive explanations.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", parents=[common], help="full pipeline from a JSON config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("split", parents=[common], help="stratified train/test split into two CSVs")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column")
    p.add_argument("--test-fraction", type=float, default=0.25)

    p = sub.add_parser("train-blackbox", parents=[common], help="train a built-in black-box")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column")
    p.add_argument("--spec", default='{"kind": "mlp"}',
                   help="black-box JSON spec, as in the config's 'blackbox' entry")

    p = sub.add_parser("explain", parents=[common], help="PP/PN explanations for every row")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column")
    p.add_argument("--model", required=True)
    p.add_argument("--bounds-data", help="CSV whose min/max define the feature box (default: --data)")
    p.add_argument("--base-data", help="CSV from which base values are derived (default: --data)")
    p.add_argument("--base", default="median", help="median, zeros, or comma-separated values")
    p.add_argument("--explainer", default="{}", help="explainer settings as JSON")

    p = sub.add_parser("grid", parents=[common], help="KDE quantile grid")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column")
    p.add_argument("-N", type=int, required=True, help="number of intervals (N+1 grid points)")
    p.add_argument("--bounds-data")

    p = sub.add_parser("gbfl", parents=[common], help="boolean clauses from explanations")
    p.add_argument("--explanations", required=True)
    p.add_argument("--grid", required=True)
    p.add_argument("--delta", type=int, required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a transparent learner on clause features")
    p.add_argument("--data", required=True)
    p.add_argument("--label-column")
    p.add_argument("--clauses", required=True)
    p.add_argument("--explanations", help="needed for black-box targets")
    p.add_argument("--targets", choices=["blackbox", "true"], default="blackbox")
    p.add_argument("--learner", choices=["tree", "logistic"], default="tree")
    p.add_argument("--height", type=int, default=5)
    p.add_argument("--min-leaf", type=int, default=1)
    p.add_argument("--l1", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=300)

    p = sub.add_parser("evaluate", parents=[common], help="consistency metrics of a transparent model")
    p.add_argument("--model", required=True)
    p.add_argument("--explanations", required=True)
    p.add_argument("--data", help="CSV with true labels for the accuracy field")
    p.add_argument("--label-column")

    p = sub.add_parser("report", parents=[common], help="re-render report.md and rules.txt from report.json")
    p.add_argument("--report", required=True)
    return parser


def _write(out, text):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _json_arg(text, name):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--{name}: invalid JSON ({exc})") from None


def _dispatch(args) -> None:
    seed = getattr(args, "seed", 0)
    out = getattr(args, "out", None)
    cmd = args.command
    if cmd == "run":
        try:
            cfg = PipelineConfig.from_json(args.config)
        except GBFLError as exc:
            raise UsageError(str(exc)) from None
        if hasattr(args, "seed"):
            cfg.seeds = [seed]
        if out:
            cfg.output_dir = out
        report = run_pipeline(cfg)
        if not cfg.output_dir:
            sys.stdout.write(render_markdown(report))
        return
    if cmd == "report":
        report = RunReport.from_dict(json.loads(Path(args.report).read_text()))
        if out:
            emit_report(report, out)
        else:
            sys.stdout.write(render_markdown(report))
        return
    if cmd == "split":
        data = load_csv(args.data, args.label_column)
        train, test = split(data, args.test_fraction, seed)
        d = Path(out or ".")
        d.mkdir(parents=True, exist_ok=True)
        label = args.label_column or "label"
        save_csv(train, d / "train.csv", label)
        save_csv(test, d / "test.csv", label)
        return
    if cmd == "train-blackbox":
        data = load_csv(args.data, args.label_column)
        model = build_blackbox(_json_arg(args.spec, "spec"), data, seed)
        if not out:
            raise UsageError("train-blackbox requires --out")
        save_model(model, out)
        return
    if cmd == "explain":
        from .explainer import ExplainerConfig
        data = load_csv(args.data, args.label_column)
        bounds = derive_bounds(load_csv(args.bounds_data, args.label_column) if args.bounds_data else data)
        base_src = load_csv(args.base_data, args.label_column) if args.base_data else data
        strategy = args.base if args.base in ("median", "zeros") else [float(v) for v in args.base.split(",")]
        base = derive_base_values(base_src, strategy, bounds)
        try:
            ecfg = ExplainerConfig(**_json_arg(args.explainer, "explainer"))
        except TypeError as exc:
            raise UsageError(f"--explainer: {exc}") from None
        expl = explain_dataset(load_model(args.model, data.n_features), data, base, bounds, ecfg)
        if not out:
            raise UsageError("explain requires --out")
        save_explanations(expl, out, data.feature_names)
        return
    if cmd == "grid":
        data = load_csv(args.data, args.label_column)
        bounds = derive_bounds(load_csv(args.bounds_data, args.label_column) if args.bounds_data else data)
        G = generate_grid(data, bounds, args.N)
        if out:
            save_grid(G, out, data.feature_names)
        else:
            save_grid(G, "/dev/stdout", data.feature_names)
        return
    if cmd == "gbfl":
        expl = load_explanations(args.explanations)
        G, names = load_grid(args.grid)
        clauses = generate_clauses(expl, G, expl.base, args.delta)
        if not clauses:
            raise GBFLError("no clause survived")
        if not out:
            raise UsageError("gbfl requires --out")
        save_clauses(clauses, out, names)
        return
    if cmd == "fit":
        data = load_csv(args.data, args.label_column)
        clauses, _ = load_clauses(args.clauses)
        M = ClauseEvaluator(clauses, data.n_features)(data.features)
        if args.targets == "blackbox":
            if not args.explanations:
                raise UsageError("--targets blackbox needs --explanations")
            y = load_explanations(args.explanations).y_blackbox
        else:
            y = data.labels
        if args.learner == "tree":
            model = fit_tree(M, y, args.height, args.min_leaf, seed, data.n_classes)
            hp = {"max_height": args.height}
        else:
            model = fit_logistic_l1(M, y, args.l1, args.epochs, seed=seed, n_classes=data.n_classes)
            hp = {"l1": args.l1}
        tm = TransparentModel("GBFL", model, clauses, data.n_features, hp)
        if not out:
            raise UsageError("fit requires --out")
        tm.save(out, data.feature_names)
        return
    if cmd == "evaluate":
        tm = TransparentModel.load(args.model)
        expl = load_explanations(args.explanations)
        labels = load_csv(args.data, args.label_column).labels if args.data else None
        rep = evaluate_transparent(tm, expl, labels)
        _write(out, json.dumps(rep.to_dict(), indent=1) + "\n")
        return
    raise UsageError(f"unknown command {cmd}")  # pragma: no cover


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        _dispatch(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (GBFLError, OSError) as exc:
        print(f"gbfl: error: {exc}", file=sys.stderr)
        return 2
    return 0


cli = main
