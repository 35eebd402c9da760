"""
Command line entry point::

    fedhpo full --config config/experiment.json --out out/
    fedhpo phase1 --seed 7
    fedhpo phase2 --out out/
    fedhpo report --out out/ --format csv

Exit codes: 0 on success, 1 for an invalid configuration, 2 for any other failure.
"""

import argparse
import logging
import sys
from typing import Optional, Sequence

from fedhpo import pipeline
from fedhpo.config import ConfigError, load_experiment_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_FAILURE = 2

COMMANDS = ("phase1", "phase2", "full", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        type=str,
        default="config/experiment.json",
        help="Path to the experiment configuration JSON",
    )
    common.add_argument(
        "--seed", type=int, default=None, help="Override the master seed"
    )
    common.add_argument(
        "--out", type=str, default=None, help="Override the output directory"
    )
    common.add_argument("--verbose", action="store_true", help="Log at DEBUG level")

    parser = argparse.ArgumentParser(
        prog="fedhpo", description="Federated hyperparameter transfer experiments"
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("phase1", parents=[common], help="Per-task TPE search")
    commands.add_parser("phase2", parents=[common], help="Federated scheme comparison")
    commands.add_parser("full", parents=[common], help="Phase 1 followed by phase 2")
    report = commands.add_parser(
        "report", parents=[common], help="Re-render a saved report"
    )
    report.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        cfg = load_experiment_config(args.config).with_overrides(
            seed=args.seed, output_dir=args.out
        )
        if args.command == "phase1":
            pipeline.execute_phase1(cfg)
        elif args.command == "phase2":
            pipeline.execute_phase2(cfg)
        elif args.command == "full":
            pipeline.execute_full(cfg)
        else:
            sys.stdout.write(pipeline.execute_report(cfg.output_dir, args.format))
    except ConfigError as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    except Exception:
        logger.exception("%s failed", args.command)
        return EXIT_FAILURE

    if args.command != "report":
        logger.info("%s finished, outputs in %s", args.command, cfg.output_dir)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
