"""Command-line entry point: ``mlio-bench``."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from mlio.campaign import CampaignConfig, run_campaign, samples_to_reach
from mlio.config import settings

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlio-bench",
        description="Run MLIO benchmark campaigns on the analytical testbed.",
    )
    parser.add_argument("--config", type=Path, help="YAML campaign file")
    parser.add_argument("--functions", nargs="+", help="Test functions (step alpine sumsquares levy rosenbrock ackley)")
    parser.add_argument("--dims", nargs="+", type=int, help="Total dimensionalities, even numbers")
    parser.add_argument("--reps", type=int, dest="repetitions", help="Repetitions per function and D")
    parser.add_argument("--budget", type=int, help="Total sample budget per run")
    parser.add_argument(
        "--ref-size",
        nargs="+",
        type=int,
        metavar="N",
        help="Reference pool size: one value for n_u = n_p, or two values n_u n_p",
    )
    parser.add_argument("--uq", nargs="+", choices=["robust", "stochastic"], help="UQ operators")
    parser.add_argument("--setting", type=int, choices=[1, 2], help="Initialization setting")
    parser.add_argument("--seed", type=int, help="Campaign seed")
    parser.add_argument("--out", type=Path, dest="out_dir", help="Output directory")
    parser.add_argument("--jobs", type=int, help="Parallel runs")
    parser.add_argument("--log-level", default=None, help="Logging level (default from MLIO_LOG_LEVEL)")
    return parser


def config_from_args(args: argparse.Namespace) -> CampaignConfig:
    overrides = {
        "functions": args.functions,
        "dims": args.dims,
        "repetitions": args.repetitions,
        "budget": args.budget,
        "uq": args.uq,
        "setting": args.setting,
        "seed": args.seed,
        "out_dir": args.out_dir,
        "jobs": args.jobs,
    }
    if args.ref_size:
        if len(args.ref_size) > 2:
            raise ValueError("--ref-size takes one or two values")
        overrides["n_u"] = args.ref_size[0]
        overrides["n_p"] = args.ref_size[-1]
    if args.config is not None:
        return CampaignConfig.from_yaml(args.config, **overrides)
    return CampaignConfig.model_validate({k: v for k, v in overrides.items() if v is not None})


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    try:
        cfg = config_from_args(args)
    except (ValidationError, ValueError, OSError) as e:
        logger.error(f"Invalid campaign configuration: {e}")
        return 1

    summary = run_campaign(cfg)
    for dim in cfg.dims:
        reached = samples_to_reach(summary.rows, 0.01, dim=dim)
        if reached is not None:
            logger.info(f"D={dim}: median testbed IA below 1% after {reached} samples")
    return 2 if summary.n_failed else 0


if __name__ == "__main__":
    sys.exit(main())
