"""Command-line entry point: ``beamsense <subcommand> [options]``."""
from __future__ import annotations

import argparse
import sys

from .channel import ChannelConfig, ConfigError, load_config
from .harness import ExperimentSpec, rows_to_csv, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION = 0, 1, 2

SUBCOMMANDS = {
    "q1-sweep": "q1_sweep",
    "inner-opt": "inner_opt",
    "dp-outer": "dp_outer",
    "simulate": "simulate",
    "validate": "validate",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _float_list(text):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beamsense", description="Sensing-rate bounds for beam alignment with one-bit feedback.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with ChannelConfig keys")
        sp.add_argument("--out", help="CSV output path (a .meta.json sidecar is written next to it); stdout if omitted")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--M", type=_int_list)
        sp.add_argument("--q", type=_int_list)
        sp.add_argument("--Q", type=_int_list)
        sp.add_argument("--B", type=_float_list)
        sp.add_argument("--nu", type=_float_list)
    return p


def _spec_from_args(args) -> ExperimentSpec:
    if args.config:
        cfg, seed = load_config(args.config)
    else:
        if not args.M:
            raise UsageError("either --config or --M is required")
        first = {k: getattr(args, k)[0] for k in ("M", "q", "Q", "B", "nu") if getattr(args, k)}
        cfg, seed = ChannelConfig(**first), 0
    if args.seed is not None:
        seed = args.seed
    seed = 0 if seed is None else seed
    if not 0 <= seed < 2 ** 64:
        raise UsageError("--seed must be an unsigned 64-bit integer")
    sweep = {k: getattr(args, k) for k in ("M", "q", "Q", "B", "nu") if getattr(args, k)}
    trials = args.trials if args.trials is not None else 100_000
    return ExperimentSpec(cfg=cfg, mode=SUBCOMMANDS[args.command], sweep=sweep,
                          trials=trials, seed=seed, output_path=args.out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        spec = _spec_from_args(args)
    except UsageError as exc:
        print(f"beamsense: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError, OSError) as exc:
        print(f"beamsense: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    rows, ok = run_experiment(spec)
    if not spec.output_path:
        sys.stdout.write(rows_to_csv(rows))
    if not ok:
        failed = [r.quantity for r in rows if r.quantity.startswith("check:") and r.value == 0.0]
        print(f"beamsense: validation failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
