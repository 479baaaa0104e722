"""Command-line surface: run, validate and oracle subcommands over TOML scenarios."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from app.config import get_settings
from app.errors import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, ProbeError, ScenarioValidationError
from app.forward import ConcentricAnnulusOracle
from app.services import OutputService, ScenarioService

logger = logging.getLogger(__name__)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_common_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    """Flags accepted both before and after the subcommand"""
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--out-dir", default=default, help="Output directory (default from PROBE_OUT_DIR)")
    parser.add_argument("--threads", type=_positive_int, default=default, help="Worker cap for sweeps")
    parser.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False, help="Debug logging")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="obstacle-probe",
        description="Range and no-response tests for the Laplace inverse obstacle problem",
    )
    _add_common_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _add_common_flags(common, suppress=True)

    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("run", "Run a scenario and write its outputs"),
        ("validate", "Check a scenario and print its violations"),
        ("oracle", "Write concentric-annulus oracle Cauchy data only"),
    ):
        command = commands.add_parser(name, help=text, parents=[common])
        command.add_argument("config", help="Scenario TOML file")
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, get_settings().log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def write_error_record(record: dict, out_dir: Path) -> None:
    """Machine-readable error record on stderr and in <out-dir>/error.json"""
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        OutputService.write_json(out_dir / "error.json", record)
    except OSError as exc:
        logger.error("could not write error record: %s", exc)


def report_error(error: ProbeError, out_dir: Path) -> int:
    write_error_record(error.to_dict(), out_dir)
    return error.exit_code


def command_run(config_path: str, out_dir: Path, threads: int) -> int:
    config = ScenarioService.load_config(config_path)
    summary = ScenarioService.run(config, out_dir, threads)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def command_validate(config_path: str) -> int:
    try:
        config = ScenarioService.load_config(config_path)
    except ScenarioValidationError as e:
        violations = e.violations
    else:
        violations = ScenarioService.validate(config)
    print(json.dumps({"violations": violations}, indent=2, sort_keys=True))
    if any(v["severity"] == "error" for v in violations):
        return EXIT_VALIDATION
    return EXIT_OK


def command_oracle(config_path: str, out_dir: Path) -> int:
    config = ScenarioService.load_config(config_path)
    obstacle = config.obstacle
    if obstacle.kind != "circle" or not np.allclose(obstacle.center, config.omega.center):
        raise ScenarioValidationError([
            {"field": "obstacle", "message": "oracle data needs concentric circles", "severity": "error"}
        ])
    frame = config.frame
    oracle = ConcentricAnnulusOracle(
        1.0,
        frame.length_to_unit(obstacle.radius),
        config.excitation.to_excitation().fourier_coefficients(),
    )
    data = oracle.cauchy_data(config.omega.nodes)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = OutputService.write_cauchy_csv(out_dir / "cauchy.csv", data, frame)
    print(str(path))
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    settings = get_settings()
    out_dir = Path(args.out_dir or settings.out_dir)
    threads = args.threads or settings.threads

    try:
        if args.command == "run":
            return command_run(args.config, out_dir, threads)
        if args.command == "validate":
            return command_validate(args.config)
        return command_oracle(args.config, out_dir)
    except ProbeError as e:
        logger.error("%s: %s", e.code, e.message)
        return report_error(e, out_dir)
    except Exception as e:
        logger.exception("unexpected failure")
        write_error_record(
            {"error": "internal_error", "message": str(e), "details": {"type": type(e).__name__}},
            out_dir,
        )
        return EXIT_NUMERICAL
