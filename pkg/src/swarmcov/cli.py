"""Command line entry point: ``python -m swarmcov <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (
    ExperimentConfig,
    bench_table1,
    bench_table2,
    bench_table3,
    emit_report,
    load_config,
    run_experiment,
    table2_orderings,
    table3_orderings,
    train_policy,
)
from .world import ConfigError


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.seeds is not None:
        cfg = replace(cfg, n_seeds=args.seeds)
    return cfg.validate()


def _out(args, cfg: ExperimentConfig | None = None) -> Path:
    return Path(args.out or (cfg and cfg.out_dir) or "out")


def cmd_train(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    res = train_policy(cfg, _out(args, cfg))
    print(json.dumps(res, indent=2))
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_experiment(cfg, record_trace=args.format == "jsonl")
    emit_report(report, _out(args, cfg), args.format)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def _bench(args, reports, orderings, stem) -> int:
    out = _out(args)
    emit_report(reports, out, "csv", stem)
    result = orderings(reports)
    (out / f"{stem}.orderings.json").write_text(json.dumps(result, indent=2) + "\n")
    for r in reports:
        print(f"{r.loss_kind:18s} alpha={r.alpha} beta={r.beta} median={r.median:g} mean={r.mean:g} best={r.best}")
    print(json.dumps({k: v for k, v in result.items() if k != "medians"}))
    return 0


def cmd_table1(args) -> int:
    rows = bench_table1(train_episodes=args.train_episodes)
    for r in rows:
        print(json.dumps(r))
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        Path(args.out, "table1.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    return 0


def cmd_table2(args) -> int:
    return _bench(args, bench_table2(args.seeds or 10, args.seed or 0), table2_orderings, "table2")


def cmd_table3(args) -> int:
    return _bench(args, bench_table3(args.seeds or 10, args.seed or 0), table3_orderings, "table3")


def cmd_check(args) -> int:
    from .acceptance import run_all

    only = {int(x) for x in args.only.split(",")} if args.only else None
    results = run_all(only)
    for r in results:
        print(r.line())
    failed = [r.to_dict() for r in results if not r.passed]
    if failed:
        print(json.dumps({"failed": failed}, indent=2), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--seeds", type=int, help="number of seeds")
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="swarmcov", description="drone coverage experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train an assignment policy").set_defaults(fn=cmd_train)
    sub.add_parser("run", parents=[common], help="run a coverage experiment").set_defaults(fn=cmd_run)
    t1 = sub.add_parser("bench-table1", parents=[common], help="policy sizes and training comparison")
    t1.add_argument("--train-episodes", type=int, default=0)
    t1.set_defaults(fn=cmd_table1)
    sub.add_parser("bench-table2", parents=[common], help="2D loss comparison").set_defaults(fn=cmd_table2)
    sub.add_parser("bench-table3", parents=[common], help="3D loss comparison").set_defaults(fn=cmd_table3)
    ck = sub.add_parser("check", parents=[common], help="run the acceptance checks")
    ck.add_argument("--only", help="comma-separated criterion numbers")
    ck.set_defaults(fn=cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(json.dumps({"error": "config", "message": str(exc)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
