"""
`dump-divisions` subcommand

    python -m grm.main dump-divisions runs/smoke/model.grmc configs/eval_easy.json --frame 5

Scenario `--scenario i` is the i-th scenario of the config's eval suite.
"""
import argparse
from pathlib import Path

from grm.commands.common import load_config, print_json
from grm.core.errors import UsageError
from grm.services.checkpoint import load_checkpoint
from grm.services.division_dump import dump_divisions
from grm.services.scenario_generator import build_suite


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("dump-divisions", help="Write per-layer division JSON and PGM heatmaps")
    parser.add_argument("ckpt", type=Path)
    parser.add_argument("scenario_config", type=Path, help="JSON run configuration with an eval.suite")
    parser.add_argument("--scenario", type=int, default=0, help="Index into the eval suite")
    parser.add_argument("--frame", type=int, default=1, help="Frame k >= 1 of the scenario")
    parser.add_argument("--out", type=Path, default=None)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    cfg = load_config(args.scenario_config)
    scenarios = build_suite(cfg.eval.suite)
    if not 0 <= args.scenario < len(scenarios):
        raise UsageError(f"scenario index {args.scenario} outside 0..{len(scenarios) - 1}")
    ckpt = load_checkpoint(args.ckpt)
    out_dir = args.out or cfg.resolved_output_dir() / "divisions"

    records = dump_divisions(ckpt.to_network(), scenarios[args.scenario], args.frame, cfg.crop, out_dir)
    print_json({
        "out_dir": str(out_dir),
        "layers": [{"layer": r.layer, "form": r.form, "ea_tokens": sum(r.D)} for r in records],
    })
    return 0
