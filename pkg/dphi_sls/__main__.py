"""Command line entry point: ``python -m dphi_sls <command>``."""

from __future__ import annotations

import argparse
from collections.abc import Callable
import logging
from pathlib import Path

from .const import (
    DEFAULT_BETA_STEP,
    DEFAULT_RING_RADIUS,
    DEFAULT_RING_SIZE,
    DEFAULT_SEED,
    EXIT_ERROR,
    SMOKE_SEEDS,
)
from .errors import DPhiError
from .harness import (
    cmd_dphi,
    cmd_dstep,
    cmd_lqr,
    cmd_ring_gen,
    cmd_sweep,
    cmd_verify,
)
from .norms import NormKind

_LOGGER = logging.getLogger(__name__)

_Command = Callable[[argparse.Namespace], int]


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return number


def _beta(value: str) -> float:
    return float("inf") if value.lower() in {"inf", "none", "null"} else float(value)


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="dphi-sls",
        description="Distributed robust controller synthesis by D-Phi iteration.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument(
        "--threads",
        type=_positive_int,
        default=None,
        help="worker threads for the per-column and per-node subproblems",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    ring = commands.add_parser("ring-gen", help="write a random ring plant")
    ring.add_argument("--n", type=_positive_int, default=DEFAULT_RING_SIZE)
    ring.add_argument("--rho", type=float, default=DEFAULT_RING_RADIUS)
    ring.add_argument("--seed", type=int, default=DEFAULT_SEED)
    ring.add_argument("--output", type=Path, default=None)
    ring.set_defaults(handler=cmd_ring_gen)

    dphi = commands.add_parser("dphi", help="run one D-Phi synthesis")
    dphi.add_argument("--config", type=Path, default=None)
    dphi.set_defaults(handler=cmd_dphi)

    sweep = commands.add_parser("sweep", help="cost versus margin over beta_max")
    sweep.add_argument("--config", type=Path, default=None)
    sweep.add_argument("--beta-max", dest="beta_max", type=_beta, nargs="+")
    sweep.set_defaults(handler=cmd_sweep)

    verify = commands.add_parser("verify", help="recheck a stored controller")
    verify.add_argument("--controller", type=Path, required=True)
    verify.add_argument("--plant", type=Path, required=True)
    verify.add_argument("--seeds", type=_positive_int, default=SMOKE_SEEDS)
    verify.set_defaults(handler=cmd_verify)

    dstep = commands.add_parser("dstep", help="compare D steps on a magnitude matrix")
    dstep.add_argument("--matrix", type=Path, required=True)
    dstep.add_argument(
        "--kind",
        choices=[NormKind.L1.value, NormKind.LINF.value, NormKind.NU.value],
        default=None,
    )
    dstep.add_argument(
        "--beta-step", dest="beta_step", type=float, default=DEFAULT_BETA_STEP
    )
    dstep.add_argument("--seed", type=int, default=DEFAULT_SEED)
    dstep.set_defaults(handler=cmd_dstep)

    lqr = commands.add_parser("lqr", help="print the LQR baseline")
    lqr.add_argument("--config", type=Path, default=None)
    lqr.set_defaults(handler=cmd_lqr)

    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    """Run one command and return its exit code."""
    args = _parse_args(argv)
    levels = (logging.WARNING, logging.INFO, logging.DEBUG)
    logging.basicConfig(
        level=levels[min(args.verbose, 2)],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: _Command = args.handler
    try:
        return handler(args)
    except DPhiError as err:
        _LOGGER.error("%s failed: %s", args.command, err)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
