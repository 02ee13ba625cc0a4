"""
`bench-mask` subcommand

    python -m grm.main bench-mask --n_z 64 --n_x 256 --heads 12 --c 768 --iters 10

Prints (or writes with --out) a two-row CSV: variant, mean_ms, std_ms, speedup.
"""
import argparse
import sys
from pathlib import Path

from grm.services.benchmark import BenchDivision, bench_mask, write_bench_csv


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("bench-mask", help="Time fused masked attention against category-wise attention")
    parser.add_argument("--n_z", type=int, default=64, help="Template tokens")
    parser.add_argument("--n_x", type=int, default=256, help="Search tokens")
    parser.add_argument("--heads", type=int, default=12)
    parser.add_argument("--c", type=int, default=768, help="Token width")
    parser.add_argument("--iters", type=int, default=10, help="Timed forward passes per variant")
    parser.add_argument("--division", choices=[d.value for d in BenchDivision], default=BenchDivision.RANDOM.value)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=None, help="CSV file (default: stdout)")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    rows = bench_mask(
        args.n_z, args.n_x, args.heads, args.c, args.iters,
        division=BenchDivision(args.division), seed=args.seed,
    )
    if args.out is None:
        write_bench_csv(rows, sys.stdout)
    else:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        with open(args.out, "w", newline="") as f:
            write_bench_csv(rows, f)
    return 0
