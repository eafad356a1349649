"""Command-line entry point: ``abayes run|compare|list-models|list-methods``.

Exit codes: 0 on success, 2 for an invalid configuration (the message names
the offending key), 3 when a method fails at run time (the message names the
method and the stage).
"""

import argparse
import sys

from .config import ConfigError
from .experiment import METHODS, MODELS, RunFailure, compare_methods, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _parser():
    ap = argparse.ArgumentParser(prog="abayes", description="Approximate Bayesian inference experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run one method on one model"),
                        ("compare", "run several methods on one model and compare them")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="YAML configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the output directory")
        p.add_argument("--workers", type=int, default=None, help="override n_workers")
    sub.add_parser("list-models", help="show the available models")
    sub.add_parser("list-methods", help="show the available methods and their parameters")
    return ap


def _list_models():
    for entry in MODELS.values():
        print(f"{entry.name}: {entry.description}")
        print(f"    methods: {', '.join(entry.methods)}")
        if entry.options:
            opts = ", ".join(f"{k}={v.default}" for k, v in entry.options.items())
            print(f"    options: {opts}")


def _list_methods():
    for entry in METHODS.values():
        print(f"{entry.name}: {entry.description}")
        for key, spec in entry.schema.items():
            print(f"    {key} ({spec.kind}, default {spec.default})")


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "list-models":
        _list_models()
        return EXIT_OK
    if args.command == "list-methods":
        _list_methods()
        return EXIT_OK
    action = run_experiment if args.command == "run" else compare_methods
    try:
        action(args.config, seed=args.seed, out=args.out, n_workers=args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunFailure as exc:
        print(f"run error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
