"""Command-line runner: engine comparisons and invariant suites."""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from sflow.config.settings import settings
from sflow.errors import SflowError
from sflow.services.experiment import (
    EXIT_USAGE, ExperimentConfigError, config_error_message, load_config, run_flow_compare, run_term_table,
)
from sflow.services.property_suites import SUITES, run_property_suite

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sflow", description="Spectral flow engines and invariant suites")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    compare = sub.add_parser("compare", help="run flow engines on a triple and compare them")
    compare.add_argument("--config", required=True, help="experiment JSON document")
    compare.add_argument("--out", help="output table (overrides output.path)")
    compare.add_argument("--format", choices=("csv", "json"), help="output format (overrides output.format)")
    compare.add_argument("--seed", type=int, help="overrides the document seed")
    compare.add_argument("--threads", type=int, help="worker threads; SFLOW_THREADS takes precedence")

    terms = sub.add_parser("terms", help="write the residue term table of a circle experiment")
    terms.add_argument("--config", required=True, help="experiment JSON document")
    terms.add_argument("--w", type=int, default=1, help="winding number")
    terms.add_argument("--out", required=True, help="CSV path")

    suite = sub.add_parser("suite", help="run an invariant suite")
    suite.add_argument("name", help=f"one of {', '.join(SUITES)}")
    suite.add_argument("--seed", type=int, default=42)
    suite.add_argument("--out", help="JSON report path")
    return parser


def _configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=level,
    )


def _load(path):
    try:
        return load_config(path)
    except (ValidationError, ExperimentConfigError) as e:
        logger.error(f"Configuration error: {config_error_message(e)}")
        return None


def _compare(args) -> int:
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_USAGE
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    return run_flow_compare(cfg, out=args.out, fmt=args.format, threads=args.threads)


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        if args.command == "compare":
            return _compare(args)
        if args.command == "terms":
            cfg = _load(args.config)
            return EXIT_USAGE if cfg is None else run_term_table(cfg, args.w, args.out)
        return run_property_suite(args.name, args.seed, args.out)
    except SflowError as e:
        logger.error(f"Failed: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
