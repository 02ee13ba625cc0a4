"""
GRM Tracker - Command Line Entry Point

    python -m grm.main <subcommand> [options]

Subcommands: train, eval, bench-mask, dump-divisions, grad-check, ablate.

Exit status:
    0  success
    1  generic failure (usage, shape or numeric errors, unexpected exceptions)
    2  invalid or missing configuration (the message names the key path)
    3  training diverged (NaN/Inf; the message names the step and scope)
    4  checkpoint magic/format version mismatch
    5  gradient check above tolerance (the message names the parameter)
"""
import argparse
import logging
import sys
from typing import List, Optional

from grm import __version__
from grm.commands import ablate, bench, divisions, evaluate, gradcheck, train
from grm.core.errors import GRMError, UsageError
from grm.core.logging import configure_logging

logger = logging.getLogger(__name__)

COMMANDS = (train, evaluate, bench, divisions, gradcheck, ablate)


class _Parser(argparse.ArgumentParser):
    """Reports command line mistakes as UsageError (exit 1) instead of exiting 2"""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="grm", description="Desk-scale GRM tracker")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="Overrides LOG_LEVEL")
    parser.add_argument("--log-format", choices=["text", "json"], default=None, help="Overrides LOG_FORMAT")
    subparsers = parser.add_subparsers(dest="command", metavar="<subcommand>")
    subparsers.required = True
    for command in COMMANDS:
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parse `argv`, run the subcommand and return its exit status"""
    try:
        args = build_parser().parse_args(argv)
    except GRMError as e:
        logger.error(str(e))
        return e.exit_code

    configure_logging(args.log_level, args.log_format)
    try:
        return args.handler(args)
    except GRMError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except Exception:
        logger.exception(f"{args.command} failed with an unexpected error")
        return 1


if __name__ == "__main__":
    sys.exit(main())
