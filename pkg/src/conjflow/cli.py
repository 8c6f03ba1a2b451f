"""Command line interface.

  conjflow run --experiment <id> --model <id> [--seeds 0..4] [--config f]
  conjflow table --in <dir> [--csv <path>]
  conjflow plotdata --run <run-dir> [--out <path>]
  conjflow verify [--fast]

Exit codes: 0 success, 1 usage error, 2 all seeds diverged, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigurationError
from .harness import EXPERIMENTS, MODELS, ExperimentSpec, emit_plotdata, emit_table, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DIVERGED = 2
EXIT_IO = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def parse_seeds(text):
    if ".." in text:
        lo, hi = text.split("..", 1)
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(s) for s in text.split(",") if s)


def build_parser():
    parser = _Parser(prog="conjflow",
                     description="flow-structured ODE surrogates and their benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one (experiment, model) pair over a seed fan")
    run.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    run.add_argument("--model", required=True, choices=MODELS)
    run.add_argument("--seeds", default=None, help="e.g. 0..4 or 0,2,5")
    run.add_argument("--config", default=None, help="JSON file with spec field overrides")
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--epochs", type=int, default=None)
    run.add_argument("--workers", type=int, default=None)

    table = sub.add_parser("table", help="aggregate results into benchmark tables")
    table.add_argument("--in", dest="in_dir", required=True)
    table.add_argument("--csv", default=None, help="also write a CSV mirror here")

    plot = sub.add_parser("plotdata", help="emit model-vs-reference trajectory CSV for one run")
    plot.add_argument("--run", required=True, help="a seed directory containing result.json")
    plot.add_argument("--out", default=None)

    ver = sub.add_parser("verify", help="run the invariant suites")
    ver.add_argument("--fast", action="store_true", help="smaller sample counts")
    return parser


def cmd_run(args):
    overrides = {}
    if args.config:
        try:
            with open(args.config) as fh:
                overrides.update(json.load(fh))
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_IO
        except json.JSONDecodeError as exc:
            print(f"error: invalid config JSON: {exc}", file=sys.stderr)
            return EXIT_USAGE
    if args.seeds is not None:
        overrides["seeds"] = parse_seeds(args.seeds)
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.workers is not None:
        overrides["workers"] = args.workers

    try:
        spec = ExperimentSpec.build(args.experiment, args.model, overrides)
    except (ConfigurationError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        results, aggregate = run_experiment(spec)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO

    for r in results:
        status = "DIVERGED" if r.diverged else "ok"
        print(f"seed {r.seed}: L_acc={r.l_acc:.3e} L_extrap={r.l_extrap:.3e} "
              f"time={r.wall_time_s:.1f}s [{status}]")
    if aggregate["l_acc"]["mean"] is None:
        print("all seeds diverged", file=sys.stderr)
        return EXIT_DIVERGED
    if aggregate["n_diverged"]:
        print(f"warning: {aggregate['n_diverged']} diverged seed(s) excluded from aggregates")
    print(f"aggregate: L_acc={aggregate['l_acc']['mean']:.3e} +- {aggregate['l_acc']['std']:.3e}, "
          f"L_extrap={aggregate['l_extrap']['mean']:.3e} +- {aggregate['l_extrap']['std']:.3e}")
    print(f"results under {spec.model_dir()}")
    return EXIT_OK


def cmd_table(args):
    try:
        text, gaps = emit_table(args.in_dir, csv_path=args.csv)
    except (FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(text)
    if gaps:
        print(f"{gaps} missing cell(s)", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_plotdata(args):
    try:
        path = emit_plotdata(args.run, out_path=args.out)
    except (FileNotFoundError, OSError, KeyError) as exc:
        print(f"error: cannot read run data: {exc}", file=sys.stderr)
        return EXIT_IO
    print(path)
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_all

    rows = run_all(fast=args.fast)
    failed = 0
    for name, passed, detail in rows:
        mark = "PASS" if passed else "FAIL"
        print(f"[{mark}] {name:28s} {detail}")
        failed += 0 if passed else 1
    print(f"{len(rows) - failed}/{len(rows)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_USAGE


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return cmd_run(args)
    if args.command == "table":
        return cmd_table(args)
    if args.command == "plotdata":
        return cmd_plotdata(args)
    return cmd_verify(args)


if __name__ == "__main__":
    sys.exit(main())
