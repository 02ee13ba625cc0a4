"""
`ablate` subcommand

    python -m grm.main ablate configs/ablation.json --workers 2 --out runs/ablation

Trains and evaluates every variant of `ablation.variants` with the same seed
and prints the ablation CSV (also written to <out>/ablation.csv).
"""
import argparse
import logging
import sys
from pathlib import Path

from grm.commands.common import load_config, resolve_seed
from grm.core.errors import UsageError
from grm.workers.ablation import ABLATION_CSV_NAME, run_ablation

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("ablate", help="Run the division ablation grid")
    parser.add_argument("config_path", type=Path)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=1, help="Variants trained in parallel")
    parser.add_argument("--out", type=Path, default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    if args.workers < 1:
        raise UsageError(f"--workers must be at least 1, got {args.workers}")
    cfg = load_config(args.config_path)
    seed = resolve_seed(cfg, args.seed)
    out_dir = args.out or cfg.resolved_output_dir() / "ablation"

    rows = run_ablation(cfg, out_dir=out_dir, workers=args.workers, seed=seed)
    with open(out_dir / ABLATION_CSV_NAME) as f:
        sys.stdout.write(f.read())
    logger.info(f"Ablation of {len(rows)} variants written to {out_dir}")
    return 0
