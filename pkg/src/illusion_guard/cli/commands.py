"""Command-line interface of the testbed."""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from ..core.config import get_settings
from ..core.exceptions import ReportError
from ..core.logging import get_logger
from ..schemas.config import ExperimentConfig, ExperimentName, config_hash
from ..schemas.results import ReportBundle
from ..services.acceptance import evaluate_acceptance
from ..services.config_service import load_config, parse_config, write_effective_config
from ..services.experiment_service import ExperimentService
from ..services.report_service import SUMMARY_FILE, emit_report, load_report
from ..store.artifacts import ArtifactStore
from .error_handlers import EXIT_FAILURE, EXIT_OK, handle_error

logger = get_logger("cli")

CACHE_DIR = "cache"

EXPERIMENT_COMMANDS: Dict[str, List[ExperimentName]] = {
    "grid": ["grid"],
    "baselines": ["baselines"],
    "sweep": ["sweep"],
    "attack-cost": ["attack_cost"],
    "transfer": ["transfer"],
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment file")
    common.add_argument("--seed", type=int, help="Override the master seed")
    common.add_argument("--out-dir", type=Path, help="Output directory")
    common.add_argument("--threads", type=int, help="Worker threads for per-sample work")
    common.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
    )

    parser = argparse.ArgumentParser(
        prog="illusion-guard",
        description="Adversarial illusions on a synthetic shared embedding space, "
        "and consensus over generative reconstructions as a defense.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen-data", parents=[common], help="Generate and cache the dataset")
    commands.add_parser("fit", parents=[common], help="Fit and cache encoders, decoder and PCA")
    for name in EXPERIMENT_COMMANDS:
        commands.add_parser(name, parents=[common], help=f"Run the {name} experiment")
    commands.add_parser("report", parents=[common], help="Run every configured experiment")
    commands.add_parser("check", parents=[common], help="Evaluate acceptance on a finished run")
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config, seed=args.seed, threads=args.threads)
    return parse_config({}, seed=args.seed, threads=args.threads)


def _previous_bundle(out_dir: Path, cfg: ExperimentConfig) -> Optional[ReportBundle]:
    """Tables of an earlier run of the same configuration in ``out_dir``."""
    if not (out_dir / SUMMARY_FILE).is_file():
        return None
    try:
        previous = load_report(out_dir)
    except ReportError as e:
        logger.warning(f"Ignoring unreadable previous report: {e.message}")
        return None
    if previous.provenance.config_hash != config_hash(cfg):
        logger.info("Previous report in the output directory used another configuration")
        return None
    return previous


def _run_experiments(
    service: ExperimentService, out_dir: Path, experiments: Sequence[ExperimentName]
) -> int:
    bundle = service.run(experiments)
    previous = _previous_bundle(out_dir, service.cfg)
    if previous is not None:
        bundle = previous.merged(bundle)
    emit_report(bundle, out_dir, timing=service.timing)
    return EXIT_OK


def _check(out_dir: Path) -> int:
    results = evaluate_acceptance(load_report(out_dir))
    for result in results:
        status = "skip" if result.passed is None else ("pass" if result.passed else "FAIL")
        print(f"{result.criterion:>3}  {status:<4}  {result.name}: {result.detail}")
    return EXIT_FAILURE if any(r.passed is False for r in results) else EXIT_OK


def run_command(args: argparse.Namespace) -> int:
    settings = get_settings()
    settings.configure_logging(args.log_level)
    cfg = _config(args)
    out_dir = settings.resolve_output_dir(args.out_dir, cfg.output_dir)
    if args.command == "check":
        return _check(out_dir)

    cfg = cfg.model_copy(update={"output_dir": out_dir})
    write_effective_config(cfg, out_dir)
    service = ExperimentService(cfg, ArtifactStore(out_dir / CACHE_DIR))
    if args.command == "gen-data":
        dataset = service.dataset
        logger.info(f"Dataset ready: {len(dataset.train)} train, {len(dataset.eval)} eval images")
        return EXIT_OK
    if args.command == "fit":
        service.fit_all()
        return EXIT_OK
    if args.command == "report":
        return _run_experiments(service, out_dir, cfg.experiments)
    return _run_experiments(service, out_dir, EXPERIMENT_COMMANDS[args.command])


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    try:
        return run_command(args)
    except Exception as e:
        return handle_error(e)


if __name__ == "__main__":
    sys.exit(main())
