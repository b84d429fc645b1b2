"""
Command-line entry point.

    vmsns tgv-converge|rollup|project|run [--config FILE] [--key value ...] [-v|-vv]

Exit codes: 0 success, 2 configuration error or invalid argument,
3 solver failure, 4 file error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from .config import CONVERTERS, RunConfig, parse_config
from .exceptions import ConfigurationError, VmsnsError
from .service import (
    create_simulation,
    run_project_only,
    run_projection,
    run_simulation,
    run_tgv_study,
)

logger = logging.getLogger(__name__)

COMMANDS = ("tgv-converge", "rollup", "project", "run")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vmsns",
        description=(
            "Structure-preserving 2D incompressible Navier-Stokes: Galerkin and "
            "variational multiscale runs, convergence studies and projections."
        ),
        epilog="Any configuration key may be given as --key value and overrides the file.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, default=None, help="flat key = value file")
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug"
    )
    return parser


def parse_overrides(extra: Sequence[str]) -> dict[str, str]:
    """
    Turn trailing `--key value` (or `--key=value`) pairs into overrides.

    Raises:
        ConfigurationError: On a dangling flag, a bare value or an unknown key
    """
    overrides: dict[str, str] = {}
    items = list(extra)
    i = 0
    while i < len(items):
        token = items[i]
        if not token.startswith("--"):
            raise ConfigurationError(f"Unexpected argument {token!r}")
        key, sep, value = token[2:].partition("=")
        if not sep:
            if i + 1 >= len(items):
                raise ConfigurationError(f"Flag --{key} needs a value", key=key)
            value = items[i + 1]
            i += 1
        if key not in CONVERTERS:
            raise ConfigurationError(f"Unknown key {key!r}", key=key)
        overrides[key] = value
        i += 1
    return overrides


def configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _output_dir(config: RunConfig) -> Path:
    path = Path(config.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_tgv_convergence(config: RunConfig) -> int:
    reports = run_tgv_study(config, _output_dir(config))
    for stem, report in reports.items():
        for (mode, k), orders in report.observed_orders().items():
            if orders is not None:
                print(f"{stem} {mode} k={k}: orders " + " ".join(f"{o:.2f}" for o in orders))
    return 0


def cmd_rollup(config: RunConfig) -> int:
    return cmd_run(config)


def cmd_run(config: RunConfig) -> int:
    out = _output_dir(config)
    if config.mode == "project-only":
        run_project_only(config, out)
        return 0
    result = run_simulation(create_simulation(config), out)
    final = result.records[-1]
    print(
        f"t={final.t:g} K={final.K_total:.12e} E={final.E_total:.12e} "
        f"W={final.W_total:.3e} max Picard={max(r.picard_iters for r in result.records)}"
    )
    return 0


def cmd_project(config: RunConfig) -> int:
    projected = run_projection(config, _output_dir(config))
    print(f"Projected reference at t={projected.projection.t:g} onto N={config.N} p={config.p}")
    return 0


HANDLERS: dict[str, Callable[[RunConfig], int]] = {
    "tgv-converge": cmd_tgv_convergence,
    "rollup": cmd_rollup,
    "project": cmd_project,
    "run": cmd_run,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    configure_logging(args.verbose)
    try:
        overrides = parse_overrides(extra)
        if args.command == "rollup":
            overrides.setdefault("case", "rollup")
        config = parse_config(args.config, overrides)
        return HANDLERS[args.command](config)
    except VmsnsError as err:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
