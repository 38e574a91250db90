"""Command line entry point.

    cocycle-lab <subcommand> --config <file> [--seed N] [--threads N] [--out DIR]

Flags override the matching config keys; nothing is read from the
environment.  Exit codes: 0 success, 2 invalid config or arguments,
3 diagnostic failure (an estimator detected that its own output cannot
be trusted).  Errors are printed to stderr tagged with the config hash
so a failed run can be matched to its exact inputs later.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, DiagnosticError, InvalidInputError
from .harness import SUBCOMMANDS, config_hashes, load_config, run_subcommand


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cocycle-lab",
        description="simulation and estimation for products of random matrices",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("--threads", type=int, default=None, help="override run.threads")
        p.add_argument("--out", default=None, help="override run.output_dir")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        raw = config.raw
        if args.seed is not None or args.threads is not None or args.out is not None:
            raw = dict(raw)
            run = dict(raw.get("run", {}))
            if args.seed is not None:
                run["seed"] = args.seed
            if args.threads is not None:
                run["threads"] = args.threads
            if args.out is not None:
                run["output_dir"] = args.out
            raw["run"] = run
            from .harness import parse_config

            config = parse_config(raw)
    except (ConfigError, InvalidInputError, OSError) as exc:
        print(f"cocycle-lab: error: {exc}", file=sys.stderr)
        return 2

    try:
        record = run_subcommand(args.subcommand, config)
    except DiagnosticError as exc:
        tag = getattr(exc, "config_hash", config_hashes(config.raw)[0])[:12]
        print(f"cocycle-lab: diagnostic failure [{tag}]: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, InvalidInputError) as exc:
        tag = getattr(exc, "config_hash", config_hashes(config.raw)[0])[:12]
        print(f"cocycle-lab: error [{tag}]: {exc}", file=sys.stderr)
        return 2
    print(
        f"{args.subcommand}: wrote {', '.join(record.files)} to {config.output_dir} "
        f"({record.wall_time_s:.1f}s)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
