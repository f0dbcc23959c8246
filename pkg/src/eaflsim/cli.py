"""``simulate`` command line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .report import run_experiments
from .selection import StrategyKind

log = logging.getLogger("eaflsim")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="simulate",
        description="Compare Random, Oort-style and energy-aware client selection on a simulated battery-powered fleet.",
    )
    p.add_argument("--config", required=True, type=Path, help="experiment config file (key = value, INI sections)")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--strategy", help="run a single strategy: random, oort or eafl")
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--rounds", type=int, help="number of rounds")
    p.add_argument("--f", dest="blend_f", type=float, help="blend weight between utility and battery power")
    p.add_argument("--jobs", type=int, help="parallel (strategy, seed) runs")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    try:
        if args.strategy is not None:
            overrides["strategy"] = StrategyKind.parse(args.strategy)
        for key in ("seed", "rounds", "blend_f", "jobs"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        if args.out is not None:
            overrides["output_dir"] = str(args.out)
        spec = parse_config(args.config, overrides)
    except (ConfigError, ValueError) as exc:
        print(f"simulate: config error: {exc}", file=sys.stderr)
        return 2

    try:
        report = run_experiments(spec)
    except OSError as exc:
        print(f"simulate: {exc}", file=sys.stderr)
        return 3

    for name, stats in report.strategy_summary().items():
        acc = stats["final_accuracy"]["mean"]
        drops = stats["final_dropouts"]["mean"]
        jain = stats["final_jains_index"]["mean"]
        print(f"{name:>7}: accuracy={acc:.4f} dropouts={drops:.1f} jain={jain:.3f}")
    print(f"wrote {spec.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
