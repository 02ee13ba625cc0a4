"""
`train` subcommand

    python -m grm.main train configs/smoke.json --seed 0 --out runs/smoke

Writes model.grmc, loss.csv and the resolved config.json to the output
directory (default: `output_dir` of the config, else OUTPUT_DIR / "train").
"""
import argparse
import logging
from pathlib import Path

from grm.commands.common import load_config, print_json, resolve_seed
from grm.schemas.config import PipelinePolicy
from grm.workers.trainer import train

logger = logging.getLogger(__name__)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="Train a tracker on synthetic scenarios")
    parser.add_argument("config_path", type=Path, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Run seed (overrides GRM_SEED and the config)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory")
    parser.add_argument(
        "--policy",
        choices=[p.value for p in PipelinePolicy],
        default=None,
        help="Override model.policy",
    )
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    overrides = {"model.policy": args.policy} if args.policy else None
    cfg = load_config(args.config_path, overrides)
    seed = resolve_seed(cfg, args.seed)
    out_dir = args.out or cfg.resolved_output_dir() / "train"

    logger.info(f"Training {args.config_path} with seed {seed} into {out_dir}")
    result = train(cfg, seed=seed, out_dir=out_dir)
    print_json({
        "checkpoint": str(result.checkpoint_path),
        "checkpoint_sha256": result.checkpoint_sha256,
        "epochs": len(result.epochs),
        "final_loss": result.final_loss,
    })
    return 0
