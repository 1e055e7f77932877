"""``isac-bench``: run seeded benchmark experiments from the command line.

Exit codes: 0 when every check passes, 1 when an experiment reports a
failed check, 2 for usage mistakes, 3 for unreadable or invalid configs.
"""

import argparse
import os
import sys

from .config import ConfigError, check_keys, read_flat_config_lines
from .experiments import (
    KNOWN_KEYS,
    describe,
    experiment_names,
    radio_config_from,
    run_experiment,
)


def _check_types(values, lines):
    """Enforce the declared type of each known key, naming the bad line."""
    for key, want in KNOWN_KEYS.items():
        if key not in values:
            continue
        val = values[key]
        ok = (
            isinstance(val, int) and not isinstance(val, bool)
            if want is int
            else isinstance(val, (int, float)) and not isinstance(val, bool)
        )
        if not ok:
            raise ConfigError(
                f"{key} expects {want.__name__}, got {val!r}",
                lines.get(key),
            )


def load_config(path):
    """Values from a flat config file, fully validated; ConfigError if not."""
    try:
        values, lines = read_flat_config_lines(path)
    except OSError as exc:
        raise ConfigError(f"cannot read {path!r}: {exc.strerror or exc}")
    check_keys(values, KNOWN_KEYS, lines=lines)
    _check_types(values, lines)
    try:
        radio_config_from(values)  # keys may be individually fine yet clash
    except ValueError as exc:
        raise ConfigError(str(exc))
    return values


def build_parser():
    parser = argparse.ArgumentParser(
        prog="isac-bench",
        description="Seeded sensing/communication benchmark experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment and print its checks")
    p_run.add_argument("experiment", help="experiment name, see 'list'")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--config", help="flat 'key = value' override file")
    p_run.add_argument("--out", default=".", help="directory for CSV output")
    p_run.add_argument("--plots", action="store_true",
                       help="write PNG summaries next to the CSVs")

    sub.add_parser("list", help="list experiment names")

    p_val = sub.add_parser("validate", help="check a config file and exit")
    p_val.add_argument("config")

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for name in experiment_names():
            print(f"{name:22s} {describe(name)}")
        return 0

    if args.command == "validate":
        try:
            values = load_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3
        print(f"{args.config}: ok ({len(values)} key(s))")
        print("accepted keys:")
        for key, want in KNOWN_KEYS.items():
            print(f"  {key}  ({want.__name__})")
        return 0

    if args.experiment not in experiment_names():
        known = ", ".join(experiment_names())
        print(f"error: unknown experiment {args.experiment!r}; "
              f"known: {known}", file=sys.stderr)
        return 2

    values = {}
    if args.config is not None:
        try:
            values = load_config(args.config)
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 3

    os.makedirs(args.out, exist_ok=True)
    report = run_experiment(args.experiment, seed=args.seed, values=values,
                            out_dir=args.out, plots=args.plots)
    for line in report.lines:
        print(line)
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
