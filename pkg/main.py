"""Command-line entry point.

Usage:
    python main.py simulate --config configs/msd_perturbation_k.yaml --out outputs/msd
    python main.py map --config configs/msd_map.yaml --workers 4
    python main.py adaptive --config configs/cylinder_adaptive_sliding.yaml
    python main.py appendix --config configs/cylinder_appendix_perturbation.yaml
    python main.py fixture --config configs/cylinder_reg1_map.yaml --out fixtures/cylinder
"""

import argparse
import sys
from typing import List, Optional

from app.core.config import get_config
from app.core.exceptions import ConfigurationError, DivergenceError, EscError, ExperimentError
from app.core.logger import get_logger, setup_logging
from app.pipeline.orchestrator import ExperimentOrchestrator

COMMANDS = ("simulate", "map", "adaptive", "appendix", "fixture")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def seed_type(value: str) -> int:
    seed = int(value)
    if not 0 <= seed < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return seed


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wave-esc",
        description="Extremum-seeking PTO tuning for oscillators and submerged wave energy converters.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="scenario YAML file")
    parser.add_argument("--out", default=None, help="artifact directory (default: outputs/<run_id>)")
    parser.add_argument("--seed", type=seed_type, default=None, help="phase seed for irregular seas")
    parser.add_argument("--workers", type=int, default=None, help="worker processes for map/appendix")
    parser.add_argument("--no-svg", action="store_true", help="skip SVG figures")
    parser.add_argument("--app-config", default=None, help="application config.yaml")
    return parser


def exit_code(error: EscError) -> int:
    """Map an error (or the cause wrapped by an experiment step) to an exit code."""
    cause = error.cause if isinstance(error, ExperimentError) and error.cause is not None else error
    if isinstance(cause, ConfigurationError):
        return EXIT_CONFIG
    if isinstance(cause, DivergenceError):
        return EXIT_DIVERGENCE
    return EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG

    try:
        config = get_config(args.app_config)
    except ConfigurationError as e:
        print(f"error: {e.message}", file=sys.stderr)
        return EXIT_CONFIG

    setup_logging(
        log_level=config.settings.log_level,
        log_format=config.logging.format,
        log_file=config.logging.file,
        max_bytes=config.logging.max_bytes,
        backup_count=config.logging.backup_count,
    )
    logger = get_logger()
    logger.info(f"{config.app.name} v{config.app.version}: {args.command}")

    orchestrator = ExperimentOrchestrator(
        config,
        out_dir=args.out,
        svg=False if args.no_svg else None,
        workers=args.workers,
        seed=args.seed,
    )
    try:
        result = orchestrator.execute(args.command, args.config)
    except EscError as e:
        code = exit_code(e)
        logger.error(f"{args.command} failed (exit {code}): {e.message}")
        print(f"error: {e.message}", file=sys.stderr)
        return code

    print(result["summary"])
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
