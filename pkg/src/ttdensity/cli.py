"""Command line entry point: ``ttdensity run|validate|inspect``."""
import argparse
import json
import sys

from .density import THREADS_ENV, LayeredDensity
from .exceptions import TTDensityError
from .experiments import load_config, run


def _cmd_run(args):
    cfg = load_config(args.config)
    rows = run(cfg, args.output)
    print(f"{len(rows)} rows written to {args.output or cfg.output_dir}")
    return 0


def _cmd_validate(args):
    cfg = load_config(args.config)
    print(json.dumps({"valid": True, "scenario": cfg.scenario, "config_hash": cfg.config_hash()}))
    return 0


def _cmd_inspect(args):
    ld = LayeredDensity.load(args.surrogate)
    print(json.dumps(ld.summary(), indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ttdensity",
        description="Layered tensor-train density surrogates and experiment runner.",
        epilog=f"Set {THREADS_ENV} to bound the number of worker threads.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config (YAML or JSON)")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides output_dir)")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("validate", help="check an experiment config without running it")
    p.add_argument("config")
    p.set_defaults(func=_cmd_validate)
    p = sub.add_parser("inspect", help="summarize a saved surrogate JSON file")
    p.add_argument("surrogate")
    p.set_defaults(func=_cmd_inspect)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TTDensityError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
