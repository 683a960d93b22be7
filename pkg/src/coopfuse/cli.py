"""Command-line front end.

    coopfuse run <config> [--out DIR] [--workers N] [--seeds SPEC] [--methods LIST]
    coopfuse explain <config> --seed N

Exit codes: 0 on success, 1 for configuration or usage problems, 2 for
internal failures. The output directory resolves as flag, then the
COOPFUSE_OUTPUT_DIR environment variable, then the config file.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .config import ConfigError, load_config, parse_methods, parse_seeds
from .runner import explain, run, summary_text

OUTPUT_DIR_ENV = "COOPFUSE_OUTPUT_DIR"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exit code 1, not 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="coopfuse",
        description="Cooperative BEV feature fusion experiments on synthetic LiDAR scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run the configured scenarios and write CSV tables")
    run_p.add_argument("config", help="path to an INI run config")
    run_p.add_argument("--out", help="output directory (overrides env and config)")
    run_p.add_argument("--workers", type=int, help="scenario worker processes")
    run_p.add_argument("--seeds", help='seed override: count ("50"), range ("10:60"), or list')
    run_p.add_argument("--methods", help="comma-separated method override")

    explain_p = sub.add_parser("explain", help="trace one scenario's fusion in detail")
    explain_p.add_argument("config", help="path to an INI run config")
    explain_p.add_argument("--seed", type=int, required=True, help="scenario seed to trace")
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "run":
            if args.seeds is not None:
                cfg = replace(cfg, seeds=parse_seeds(args.seeds))
            if args.methods is not None:
                cfg = replace(cfg, methods=parse_methods(args.methods))
            if args.workers is not None:
                cfg = replace(cfg, workers=args.workers)
            out_dir = args.out or os.environ.get(OUTPUT_DIR_ENV) or cfg.output_dir
            summary = run(cfg, output_dir=out_dir)
            print(summary_text(summary))
        else:
            print(explain(cfg, args.seed))
    except ConfigError as exc:
        print(f"coopfuse: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - the catch-all is the contract
        print(f"coopfuse: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
