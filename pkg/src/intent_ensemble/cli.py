"""Command-line entry point: ``intel <subcommand> ...``.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
import yaml

from .config import apply_overrides, load_config
from .errors import IntentEnsembleError, ValidationError
from .types import TMALL_BEHAVIORS, TWO_BEHAVIORS, BehaviorScheme

log = logging.getLogger("intent_ensemble")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this CLI reserves 2 for runtime failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _scheme(raw: str) -> BehaviorScheme:
    if raw == "tmall":
        return TMALL_BEHAVIORS
    if raw == "two":
        return TWO_BEHAVIORS
    names = tuple(x.strip() for x in raw.split(",") if x.strip())
    return BehaviorScheme(names)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args) -> int:
    from .pipeline import ingest

    sessions = ingest(
        args.interactions,
        args.basic_lists,
        args.out,
        _scheme(args.behaviors),
        rule=args.rule,
        top_m=args.top_m,
        min_positive=args.min_positive,
    )
    print(f"wrote {len(sessions)} sessions to {args.out}")
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    from .synthetic import SyntheticConfig, write_synthetic

    raw = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
    raw = apply_overrides(raw, args.set)
    known = {f.name for f in fields(SyntheticConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"unknown synthetic config keys: {', '.join(unknown)}")
    report = write_synthetic(SyntheticConfig(**raw), args.seed, args.out)
    print(json.dumps(report["oracle"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import train

    cfg = load_config(args.config, args.set)
    for res in train(cfg):
        print(f"seed {res.seed}: best epoch {res.best_epoch}, validation All-NDCG@3 {res.best_val:.4f} -> {res.checkpoint}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .trainer import evaluate

    cfg = load_config(args.config, args.set)
    report = evaluate(cfg, split=args.split)
    for name in sorted(report.entries):
        e = report.entries[name]
        print(f"{name:24s} {e['mean']:.4f} +- {e['std']:.4f}")
    print(f"wrote {Path(cfg.data.out_dir) / 'metrics.json'}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    from .baselines import aggregate_scores
    from .pipeline import read_sessions

    sessions = read_sessions(args.input)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for s in sessions:
            order = aggregate_scores(s.scores, args.method, s.record.item_ids)
            ids = s.record.item_ids
            fh.write(json.dumps({"session_id": s.session_id, "ranking": [ids[i] for i in order]}) + "\n")
    print(f"wrote {len(sessions)} {args.method} rankings to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .metrics import MetricsReport

    rows = []
    for run in args.runs:
        path = Path(run)
        path = path / "metrics.json" if path.is_dir() else path
        if not path.exists():
            raise ValidationError(f"no metrics.json at {path}")
        rows.append((str(run), MetricsReport.read(path)))
    names = args.metrics or sorted({n for _, r in rows for n in r.entries})
    table = {
        run: {
            "meta": rep.meta,
            "metrics": {n: {"mean": rep.entries[n]["mean"], "std": rep.entries[n]["std"]} for n in names if n in rep.entries},
        }
        for run, rep in rows
    }
    lines = ["| run | " + " | ".join(names) + " |", "|---" * (len(names) + 1) + "|"]
    for run, rep in rows:
        cells = [f"{rep.entries[n]['mean']:.4f}" if n in rep.entries else "-" for n in names]
        lines.append(f"| {run} | " + " | ".join(cells) + " |")
    print("\n".join(lines))
    if args.out:
        _write_json(args.out, table)
    return EXIT_OK


def cmd_verify_theorems(args) -> int:
    from .theorems import run_trials

    report = run_trials(
        args.trials,
        k_choices=args.k_choices,
        n_choices=args.n_choices,
        delta=args.delta,
        seed=args.seed,
        theorems=args.theorems,
        counterexample_dir=args.counterexample_dir,
    )
    if args.out:
        _write_json(args.out, report)
    for name, s in report["summary"].items():
        line = f"{name:10s} {s['passes']}/{s['trials']} hold; min slack {s['min_slack']:.3e}"
        if "max_residual" in s:
            line += f"; max residual {s['max_residual']:.3e}"
        print(line)
    failed = any(s["passes"] < s["trials"] for s in report["summary"].values())
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_predict_intents(args) -> int:
    from .trainer import load_checkpoint, predict, prepare_data, seed_dir

    cfg = load_config(args.config, args.set)
    mode = cfg.effective_intent_mode
    if mode == "none":
        raise ValidationError("this run uses no intent (intent_mode none, -Int or awelv)")
    data = prepare_data(cfg)
    tensors = data.tensors[args.split]
    if mode == "learned":
        seed = cfg.train.seeds[0] if args.seed is None else args.seed
        net, predictor, _ = load_checkpoint(seed_dir(cfg, seed) / "checkpoint.pt", cfg, data)
        probs = predict(cfg, net, predictor, tensors).intents
    else:
        probs = tensors.his_avg
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for sid, p in zip(tensors.session_ids, np.asarray(probs, dtype=np.float64)):
            fh.write(json.dumps({"session_id": sid, "intent": [float(x) for x in p]}) + "\n")
    print(f"wrote {len(tensors.session_ids)} intent distributions to {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> ArgumentParser:
    p = ArgumentParser(prog="intel", description="Intent-aware ranking ensemble toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def with_config(sp, required=True):
        sp.add_argument("--config", required=required, help="YAML run config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override, e.g. train.lr=0.01")

    s = sub.add_parser("ingest", help="raw interactions + basic lists -> sessions.jsonl")
    s.add_argument("--interactions", required=True)
    s.add_argument("--basic-lists", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--behaviors", default="tmall", help="tmall, two, or comma-separated names, lowest first")
    s.add_argument("--rule", choices=("day", "visit"), default="day")
    s.add_argument("--top-m", type=int, default=30)
    s.add_argument("--min-positive", type=int, default=3)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("gen-synthetic", help="write a seeded synthetic dataset")
    with_config(s, required=False)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen_synthetic)

    s = sub.add_parser("train", help="train every seed of a run config")
    with_config(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="evaluate checkpoints or untrained baselines, write metrics.json")
    with_config(s)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("aggregate", help="rank every session with an untrained baseline")
    s.add_argument("--method", required=True, help="single:<k>, borda or rra")
    s.add_argument("--in", dest="input", required=True, help="sessions.jsonl")
    s.add_argument("--out", required=True, help="rankings.jsonl")
    s.set_defaults(func=cmd_aggregate)

    s = sub.add_parser("report", help="tabulate several runs' metrics.json")
    s.add_argument("runs", nargs="+", help="run directories or metrics.json files")
    s.add_argument("--metrics", nargs="*", help="metric names (default: all)")
    s.add_argument("--out", help="write the table as JSON")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("verify-theorems", help="numerically check the loss decompositions")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--k", "--k-choices", dest="k_choices", default="2,3,5", help="model counts, e.g. 3 or 2,3,5")
    s.add_argument("--n", "--n-choices", dest="n_choices", default="2-20", help="item counts, e.g. 8 or 2-20")
    s.add_argument("--delta", type=float, default=0.3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--theorems", nargs="+", choices=("pointwise", "pairwise", "listwise"), default=["pointwise", "pairwise", "listwise"])
    s.add_argument("--counterexample-dir")
    s.add_argument("--out", help="report JSON path")
    s.set_defaults(func=cmd_verify_theorems)

    s = sub.add_parser("predict-intents", help="write predicted intents for a split as JSON lines")
    with_config(s)
    s.add_argument("--split", choices=("train", "val", "test"), default="test")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict_intents)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValidationError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (IntentEnsembleError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
