"""Command-line entry point ``ris-keygen``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import SWEEP_VARS, load_config


def _grid(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}: {err}") from None
    if not vals:
        raise argparse.ArgumentTypeError("grid is empty")
    return [int(v) if v.is_integer() else v for v in vals]


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ris-keygen",
                                description="RIS-assisted secret key generation experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="evaluate all configured algorithms at one operating point")
    r.add_argument("--config", required=True, help="YAML scenario file")
    r.add_argument("--out", required=True, help="output CSV path")
    r.add_argument("--seed", type=_u64, help="override run.seed")
    r.add_argument("--trials", type=_nonneg, help="override run.trials (Monte Carlo rounds)")

    s = sub.add_parser("sweep", help="sweep one parameter over a grid")
    s.add_argument("--config", required=True, help="YAML scenario file")
    s.add_argument("--var", required=True, choices=SWEEP_VARS)
    s.add_argument("--grid", required=True, type=_grid, help="comma-separated values")
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--seed", type=_u64, help="override run.seed")
    s.add_argument("--trials", type=_nonneg, help="override run.trials (Monte Carlo rounds)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if overrides:
            cfg = cfg.replace(run=overrides)
        if args.command == "run":
            rows = experiments.run(cfg)
        else:
            rows = experiments.sweep(cfg, args.var, args.grid)
        experiments.write_csv(rows, args.out)
    except (OSError, ValueError, RuntimeError) as err:
        print(f"ris-keygen: error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
