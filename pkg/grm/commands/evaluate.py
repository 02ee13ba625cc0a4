"""
`eval` subcommand

    python -m grm.main eval runs/smoke/model.grmc configs/eval_easy.json

Tracks every scenario of the config's `eval.suite` and prints the
MetricsReport JSON on stdout. `--stub oracle|fixed` replaces the network with
a harness tracker; the checkpoint argument is then not read.
"""
import argparse
import logging
from pathlib import Path

from grm.commands.common import load_config, print_json
from grm.schemas.geometry import BBox
from grm.services.checkpoint import load_checkpoint
from grm.services.evaluation import evaluate, evaluate_checkpoint
from grm.services.scenario_generator import build_suite
from grm.services.tracker import FixedBoxTracker, OracleTracker

logger = logging.getLogger(__name__)

STUBS = ("oracle", "fixed")
# far smaller than any preset target, so its IoU never reaches 0.75
FIXED_STUB_BOX = BBox(cx=0.02, cy=0.02, w=0.02, h=0.02)


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("eval", help="Evaluate a checkpoint on held-out scenarios")
    parser.add_argument("ckpt", type=Path, help="Checkpoint file (ignored with --stub)")
    parser.add_argument("scenarios_config", type=Path, help="JSON run configuration with an eval.suite")
    parser.add_argument("--stub", choices=STUBS, default=None, help="Evaluate a harness tracker instead")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.scenarios_config)
    scenarios = build_suite(cfg.eval.suite)

    if args.stub == "oracle":
        report = evaluate(OracleTracker, scenarios)
    elif args.stub == "fixed":
        report = evaluate(lambda: FixedBoxTracker(FIXED_STUB_BOX), scenarios)
    else:
        ckpt = load_checkpoint(args.ckpt)
        logger.info(f"Loaded checkpoint {args.ckpt} (config digest {ckpt.digest[:12]})")
        report = evaluate_checkpoint(ckpt, scenarios, cfg.crop)

    print_json(report)
    return 0
