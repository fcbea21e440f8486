"""
edgecode - coded federated learning simulator.

    python -m app simulate --config exp.cfg --out runs/mnist --scheme both
    python -m app allocate --config exp.cfg --sweep 0:600:61
    python -m app oracle delay-cdf
"""

import argparse
import sys
from typing import Sequence

from app.cli import router
from app.config import settings
from app.core.errors import UsageError
from app.core.logging import configure_logging, logger


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage; usage errors exit 1 here
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=settings.APP_NAME, description="Coded federated learning simulator")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--version", action="version", version=settings.APP_VERSION)
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)

    simulate = commands.add_parser("simulate", help="run a training simulation")
    simulate.add_argument("--config", required=True, help="key = value experiment file")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--scheme", choices=["coded", "uncoded", "both"])

    alloc = commands.add_parser("allocate", help="solve and print the load allocation")
    alloc.add_argument("--config", required=True)
    alloc.add_argument("--sweep", metavar="TMIN:TMAX:STEPS", help="emit t,expected_return CSV")
    alloc.add_argument("--curve", type=float, metavar="T", help="emit the first client's return curve at T")
    alloc.add_argument(
        "--batches", type=int, help="batch indices to print (default: batches per epoch of the dataset)"
    )

    oracle = commands.add_parser("oracle", help="run a closed-form cross-check suite")
    oracle.add_argument("name")
    oracle.add_argument("--seed", type=int, default=0)

    check = commands.add_parser("embed-check", help="kernel approximation error of a random map")
    check.add_argument("--dim", type=int, default=784)
    check.add_argument("--q", type=int, default=2000)
    check.add_argument("--sigma", type=float, default=5.0)
    check.add_argument("--pairs", type=int, default=1000)
    check.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(e.message, file=sys.stderr)
        return e.exit_code

    configure_logging(args.log_level)
    logger.debug("application_starting", version=settings.APP_VERSION, command=args.command)
    return router.route(args)


if __name__ == "__main__":
    sys.exit(main())
