"""``rsl`` command line.

Usage::

    rsl <experiment> --config FILE [--seed S] [--out DIR] [--jobs K]
    rsl compare DIR_A DIR_B [--out FILE]

Exit codes: 0 all assertions pass, 1 an assertion failed, 2 a solver did
not converge, 3 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from .compare import IncompatibleRunsError, compare_runs
from .config import EXPERIMENTS, ConfigError, load_config, resolve_output_dir
from .experiments import EXIT_CONFIG, run_experiment
from .io import _jsonable

log = logging.getLogger("rsl")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rsl", description="Ricci flow stability lab")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        e = sub.add_parser(name, help=f"run the {name} experiment")
        e.add_argument("--config", required=True, help="INI experiment config")
        e.add_argument("--seed", type=int, default=None, help="override [perturbation] seed")
        e.add_argument("--out", default=None, help="output directory (else [output] dir, else $RSL_OUT)")
        e.add_argument("--jobs", type=int, default=1, help="worker processes for seed sweeps")
        e.add_argument("-v", "--verbose", action="store_true")
    c = sub.add_parser("compare", help="diff the traces of two run directories")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    return p


def _compare(args) -> int:
    try:
        report = compare_runs(args.dir_a, args.dir_b)
    except IncompatibleRunsError as exc:
        print(f"rsl compare: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "compare":
        return _compare(args)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.jobs < 1:
        print("rsl: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out_dir = resolve_output_dir(args.out, cfg)
    except ConfigError as exc:
        print(f"rsl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        code = run_experiment(cfg, out_dir, jobs=args.jobs)
    except ConfigError as exc:
        print(f"rsl: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = {0: "ok", 1: "assertion failed", 2: "solver did not converge"}[code]
    print(f"rsl {cfg.experiment}: {status} ({time.perf_counter() - start:.1f} s) -> {out_dir}",
          file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
