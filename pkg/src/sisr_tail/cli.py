"""Command-line entry point: ``sisr-tail run|preset|oracle``."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import harness
from .errors import ConfigError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="sisr-tail",
                                description="SISR estimation of rare-event tail probabilities")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="directory for report.json and report.csv")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for subgroups (results do not depend on it)")
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run a JSON config")
    run.add_argument("config")
    pre = sub.add_parser("preset", parents=[common], help="reproduce a built-in study")
    pre.add_argument("name", choices=["table1", "table2"])
    orc = sub.add_parser("oracle", parents=[common], help="validate against an exact value")
    orc.add_argument("name", choices=["gaussian", "binomial"])
    return p


def _with_seed(configs, seed):
    if seed is None:
        return configs
    out = []
    for cfg in configs:
        raw = dict(cfg.raw, seed=seed)
        out.append(harness.parse_config(raw))
    return out


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("must be >= 1", "--threads")
        if args.command == "run":
            configs = harness.load_config(args.config)
        elif args.command == "preset":
            configs = (harness.table1_configs() if args.name == "table1"
                       else harness.table2_configs())
        else:
            configs = harness.oracle_configs(args.name)
        configs = _with_seed(configs, args.seed)
        stem = args.name if args.command != "run" else "report"
        reports = harness.run_experiment(configs, args.out, args.threads, stem)
        if args.command == "oracle":
            exact = harness.oracle_value(args.name)
            for rep in reports:
                z = (rep.estimate - exact) / rep.se if rep.se > 0 else float("inf")
                print(f"exact {exact:.6e}  estimate {rep.estimate:.6e}  z {z:+.2f}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
