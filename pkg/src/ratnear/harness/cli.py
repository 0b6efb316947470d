"""Command line entry point.

Exit codes: 0 on success, 1 when a run finishes but an asserted bound or
report check fails, 2 on configuration errors (bad subcommand, bad keys,
missing files, malformed values).
"""

import argparse
import sys

from ..errors import ConfigError
from .calibration import load_manifest
from .config import load_config
from .runner import RUNNERS, SCHEMAS, execute


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ratnear",
        description="Experiment harness for rational-point counts near manifolds.",
    )
    parser.add_argument("subcommand", choices=sorted(RUNNERS), help="experiment to run")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key (repeatable, highest precedence)",
    )
    parser.add_argument("--seed", type=int, help="override the seed key")
    parser.add_argument("--workers", type=int, help="override the workers key")
    parser.add_argument("--budget", type=int, help="override the budget key")
    parser.add_argument("--out", default="runs", help="output directory (default: runs)")
    parser.add_argument(
        "--calibration", help="calibration manifest path (default: packaged manifest)"
    )
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    flags = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep:
            print(f"bad --set {item!r}, expected KEY=VALUE", file=sys.stderr)
            return 2
        flags[key.strip()] = val.strip()
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.workers is not None:
        flags["workers"] = args.workers
    if args.budget is not None:
        flags["budget"] = args.budget
    try:
        cfg = load_config(SCHEMAS[args.subcommand], args.config, flags)
        manifest = None
        if args.subcommand != "calibrate":
            manifest = load_manifest(args.calibration)
        result, csv_path = execute(args.subcommand, cfg, manifest, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for key in sorted(result.summary):
        print(f"{key}: {result.summary[key]}")
    print(f"wrote {csv_path}")
    if not result.ok:
        for line in result.failures:
            print(f"FAIL {line}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
