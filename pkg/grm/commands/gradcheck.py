"""
`grad-check` subcommand

Prints one CSV row per parameter group (embedding, layer{i}, division_mlp,
head) with the worst per-entry relative error, and exits with status 5
naming the worst parameter when any error reaches 1e-4.
"""
import argparse
import csv
import sys

from grm.services.gradient_check import GRADCHECK_TOLERANCE, SCALES, group_rows, model_gradcheck

HEADER = ["group", "parameters", "entries", "rel_error", "worst_parameter", "passed"]


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("grad-check", help="Finite-difference check of the whole model")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--scale", choices=sorted(SCALES), default="tiny")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    report = model_gradcheck(seed=args.seed, scale=args.scale)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(HEADER)
    for row in group_rows(report, GRADCHECK_TOLERANCE):
        writer.writerow([
            row.group, row.parameters, row.entries, f"{row.rel_error:.3e}", row.worst_parameter or "", row.passed,
        ])
    sys.stdout.flush()
    report.raise_if_above(GRADCHECK_TOLERANCE)
    return 0
