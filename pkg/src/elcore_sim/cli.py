"""Command-line front end: run one scenario, summarize runs, audit runs."""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, SimulationError
from .harness import (audit, format_summary, load_config, run_scenario,
                      summarize)
from .strategies import STRATEGIES


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elcore-sim",
        description="Deterministic resource-management simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one scenario")
    run_p.add_argument("--config", required=True, help="scenario INI file")
    run_p.add_argument("--seed", type=int, default=None,
                       help="run seed (default: first seed in the config)")
    run_p.add_argument("--strategy", default=None,
                       choices=sorted(STRATEGIES),
                       help="discovery strategy (default: from the config)")
    run_p.add_argument("--out", default=None,
                       help="output directory (default: $ELCORE_SIM_OUT or ./runs)")

    sum_p = sub.add_parser("summarize", help="aggregate run directories")
    sum_p.add_argument("dir", help="directory containing run outputs")

    audit_p = sub.add_parser("audit", help="re-check stored run outputs")
    audit_p.add_argument("dir", help="directory containing run outputs")
    return parser


def _default_out(config_path: str, seed: int | None, strategy: str | None) -> Path:
    base = Path(os.environ.get("ELCORE_SIM_OUT", "runs"))
    stem = Path(config_path).stem
    parts = [stem]
    if strategy:
        parts.append(strategy)
    if seed is not None:
        parts.append(f"seed{seed}")
    return base / "-".join(parts)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            out = Path(args.out) if args.out else _default_out(
                args.config, args.seed, args.strategy)
            metrics = run_scenario(cfg, seed=args.seed,
                                   strategy=args.strategy, out_dir=out)
            for key in sorted(metrics.summary):
                print(f"{key} = {metrics.summary[key]:.6f}")
            print(f"outputs written to {out}")
            return 0
        if args.command == "summarize":
            rows = summarize(args.dir)
            print(format_summary(rows), end="")
            return 0
        if args.command == "audit":
            problems = audit(args.dir)
            if problems:
                for p in problems:
                    print(p, file=sys.stderr)
                print(f"audit failed: {len(problems)} problem(s)",
                      file=sys.stderr)
                return 1
            print("audit clean")
            return 0
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SimulationError as exc:
        print(f"simulation aborted: {exc}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
