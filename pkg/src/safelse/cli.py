"""Command-line entry point: ``safelse <config.json> [--seed N] [--out DIR] [--jobs K]``.

Exit status is 0 when every run finished without certificate violations
and without unexpected errors.  Overflow and divergence events recorded by
the baseline methods are expected and do not fail the process.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .config import ConfigError, parse_config
from .harness import run_experiment

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="safelse",
        description="Run a SoftPlus log-partition experiment from a JSON config.",
    )
    p.add_argument("config", help="path to the JSON config file")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"safelse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            print("safelse: seed must be >= 0", file=sys.stderr)
            return EXIT_USAGE
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.jobs < 1:
        print("safelse: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    config = dataclasses.replace(config, **changes)

    records = run_experiment(config, jobs=args.jobs)
    violations = sum(r.violations for r in records)
    errors = sum(r.unexpected_errors for r in records)
    events = sum(len(r.events) for r in records) - errors
    print(
        f"{config.experiment}: {len(records)} runs, {events} recorded events, "
        f"{violations} certificate violations, {errors} errors -> {config.output_dir}"
    )
    for r in records:
        for it, kind, detail in r.events:
            if kind not in ("overflow", "divergence"):
                print(f"  {r.run_id}: {kind}: {detail}", file=sys.stderr)
    return EXIT_OK if violations == 0 and errors == 0 else EXIT_FAILURES


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
