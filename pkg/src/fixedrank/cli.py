"""Command-line entry points.

Subcommands
    run      execute one experiment config, write the metrics CSV
    compare  run a directory of configs across seeds, write a summary table
    check    execute the invariant suite and print the report
    rsvd     randomized SVD of a task's initial gradient, print the spectrum

Exit codes: 0 success, 2 config error, 3 numerical failure
(rank collapse / degenerate spectrum / rank deficiency), 4 invariant-suite
failure.
"""

from __future__ import annotations

import argparse
import os
import sys

from .fixtures import format_double, save_matrix
from .harness import (
    NUMERICAL_ERRORS,
    ConfigError,
    compare,
    gen_task,
    load_config,
    render_summary,
    run_experiment,
)
from .initializers import RsvdConfig, backprop_rsvd
from .invariants import check_invariants, render_report
from .oracles import EffectiveWeights

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANTS = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fixedrank", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("--config", required=True, help="path to a key=value config file")
    p_run.add_argument("--out", default=None, help="CSV output path (overrides output_path)")
    p_run.add_argument(
        "--dump-task", default=None, metavar="DIR",
        help="also write the task matrices as fixture files into DIR",
    )

    p_cmp = sub.add_parser("compare", help="run configs x seeds, aggregate a summary")
    p_cmp.add_argument("--configs", required=True, help="directory of *.cfg files")
    p_cmp.add_argument("--seeds", required=True, help="comma-separated integer seeds")
    p_cmp.add_argument("--out", required=True, help="summary output path")
    p_cmp.add_argument(
        "--threshold", type=float, default=1e-6,
        help="loss threshold for the steps-to-threshold column (default 1e-6)",
    )

    p_chk = sub.add_parser("check", help="run the invariant suite")
    p_chk.add_argument("--profile", choices=("quick", "full"), default="quick")
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.add_argument("--out", default=None, help="also write the report to this path")

    p_rsvd = sub.add_parser("rsvd", help="randomized SVD of a task's initial gradient")
    p_rsvd.add_argument("--config", required=True)
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.dump_task:
        os.makedirs(args.dump_task, exist_ok=True)
        task = gen_task(cfg)
        for name, M in task.matrices:
            save_matrix(os.path.join(args.dump_task, f"{name}.mat"), M)
        records = run_experiment(cfg, csv_path=args.out, task=task)
    else:
        records = run_experiment(cfg, csv_path=args.out)
    final = records[-1]
    print(f"steps={final.step} final_loss={format_double(final.loss)}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("no seeds given")
    if not os.path.isdir(args.configs):
        raise ConfigError(f"{args.configs} is not a directory")
    named = []
    for fname in sorted(os.listdir(args.configs)):
        path = os.path.join(args.configs, fname)
        if os.path.isfile(path) and fname.endswith(".cfg"):
            named.append((os.path.splitext(fname)[0], load_config(path)))
    if not named:
        raise ConfigError(f"no .cfg files in {args.configs}")
    rows = compare(named, seeds, threshold=args.threshold)
    summary = render_summary(rows)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(summary)
    print(summary, end="")
    return EXIT_OK


def _cmd_check(args) -> int:
    results = check_invariants(profile=args.profile, seed=args.seed)
    report = render_report(results)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
    print(report, end="")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANTS


def _cmd_rsvd(args) -> int:
    cfg = load_config(args.config)
    task = gen_task(cfg)
    rsvd_cfg = RsvdConfig(p=cfg.rsvd_p_effective, q=cfg.rsvd_q, seed=cfg.seed)
    triple = backprop_rsvd(task.oracle, EffectiveWeights(task.W_base), cfg.r, rsvd_cfg)
    for value in triple.sigma:
        print(format_double(value))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "compare": _cmd_compare,
        "check": _cmd_check,
        "rsvd": _cmd_rsvd,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
