"""
Ablation Worker

Trains and evaluates one network per variant of the ablation grid.

Variants (model overrides on top of the run configuration):
    #1  policy two_stream
    #2  policy one_stream
    #3  adaptive, search tokens divided into E_T / E_S
    #4  adaptive, search tokens divided into E_T / E_S / E_A
    #5  adaptive, division on layers 2..L, max pooling (reference)
    #b  division on layers 1..L
    #c  division on the second half of the encoder, layers L//2+1..L
    #d  average pooling of template tokens
    #e  same configuration as #5; reuses its result when both are requested

Pipeline Flow (per variant):
    1. Override → reset the division axes to the reference, apply the variant,
       draw training scenarios from `ablation.train_preset`
    2. Train → workers.trainer.train with the shared run seed
    3. Evaluate → eval-mode tracking on `ablation.suite`
    4. Row → AblationRow with metrics, final loss and mean E_A fraction

Concurrency:
    Variants are independent: each gets its own output subdirectory and its
    own generators, so they can run in a process pool (`workers` > 1). Rows
    are reported in the order the variants were requested.

Usage:
    rows = run_ablation(cfg, out_dir=Path("runs/ablation"), workers=2)
"""
import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from grm.schemas.config import RunConfig, apply_overrides, parse_run_config
from grm.schemas.reports import AblationRow
from grm.services.evaluation import evaluate
from grm.services.scenario_generator import build_suite
from grm.services.tracker import GRMTracker
from grm.workers.trainer import train

logger = logging.getLogger(__name__)

ABLATION_CSV_NAME = "ablation.csv"
METRICS_NAME = "metrics.json"
ABLATION_COLUMNS = list(AblationRow.model_fields)

REFERENCE_VARIANT = "#5"
REFERENCE_OVERRIDES: Dict[str, Any] = {
    "model.policy": "adaptive",
    "model.division_layers": None,
    "model.pooling": "max",
    "model.scheme": "sa",
}


def variant_overrides(variant: str, depth: int) -> Dict[str, Any]:
    """Model overrides of one variant label for an encoder of `depth` layers"""
    overrides = dict(REFERENCE_OVERRIDES)
    if variant == "#1":
        overrides["model.policy"] = "two_stream"
    elif variant == "#2":
        overrides["model.policy"] = "one_stream"
    elif variant == "#3":
        overrides["model.scheme"] = "ts"
    elif variant == "#4":
        overrides["model.scheme"] = "tsa"
    elif variant == "#b":
        overrides["model.division_layers"] = list(range(1, depth + 1))
    elif variant == "#c":
        overrides["model.division_layers"] = list(range(depth // 2 + 1, depth + 1))
    elif variant == "#d":
        overrides["model.pooling"] = "avg"
    return overrides


def variant_config(cfg: RunConfig, variant: str, seed: int) -> RunConfig:
    overrides = variant_overrides(variant, cfg.model.depth)
    overrides["train.scenarios.preset"] = cfg.ablation.train_preset.value
    overrides["seed"] = seed
    return apply_overrides(cfg, overrides)


def _format_layers(cfg: RunConfig) -> str:
    layers = cfg.model.predictor_layers()
    return ";".join(str(layer) for layer in layers) if layers else "-"


def _run_variant(variant: str, cfg_data: Dict[str, Any], out_dir: Optional[str]) -> Dict[str, Any]:
    """Train and evaluate one variant; module level so a process pool can pickle it"""
    cfg = parse_run_config(cfg_data)
    variant_dir = Path(out_dir) if out_dir is not None else None
    logger.info(f"Ablation variant {variant}: policy={cfg.model.policy.value}, "
                f"layers={_format_layers(cfg)}, pooling={cfg.model.pooling.value}, scheme={cfg.model.scheme.value}")

    result = train(cfg, seed=cfg.seed, out_dir=variant_dir)
    net = result.network
    report = evaluate(lambda: GRMTracker(net, cfg.crop), build_suite(cfg.ablation.suite))
    if variant_dir is not None:
        (variant_dir / METRICS_NAME).write_text(json.dumps(report.model_dump(), indent=2) + "\n")

    fractions = [f for f in report.ea_fraction_per_layer if f is not None]
    row = AblationRow(
        variant=variant,
        policy=cfg.model.policy.value,
        division_layers=_format_layers(cfg),
        pooling=cfg.model.pooling.value,
        scheme=cfg.model.scheme.value,
        mean_IoU=report.mean_IoU,
        sr50=report.sr50,
        sr75=report.sr75,
        final_loss=result.final_loss,
        mean_ea_fraction=float(np.mean(fractions)) if fractions else None,
    )
    return row.model_dump()


def run_ablation(
    cfg: RunConfig,
    out_dir: Optional[Path] = None,
    workers: int = 1,
    seed: Optional[int] = None,
) -> List[AblationRow]:
    """
    Run every requested variant and collect one row each

    Args:
        cfg: Run configuration; `ablation.variants` selects the grid
        out_dir: When given, receives ablation.csv and one subdirectory per variant
        workers: Process pool size (1 runs the variants in this process)
        seed: Shared seed of every variant (defaults to cfg.seed)

    Returns:
        Rows in the order of `ablation.variants`
    """
    seed = cfg.seed if seed is None else seed
    requested = list(dict.fromkeys(cfg.ablation.variants))
    # "#e" is "#5" under another label; train it once
    runs = [v for v in requested if not (v == "#e" and REFERENCE_VARIANT in requested)]

    jobs = []
    for variant in runs:
        variant_dir = None
        if out_dir is not None:
            variant_dir = str(Path(out_dir) / variant.lstrip("#"))
        data = variant_config(cfg, variant, seed).model_dump(mode="json")
        jobs.append((variant, data, variant_dir))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_variant, *job) for job in jobs]
            results = [future.result() for future in futures]
    else:
        results = [_run_variant(*job) for job in jobs]

    by_variant = {data["variant"]: AblationRow(**data) for data in results}
    if "#e" in requested and "#e" not in by_variant:
        by_variant["#e"] = by_variant[REFERENCE_VARIANT].model_copy(update={"variant": "#e"})
    rows = [by_variant[v] for v in requested]

    if out_dir is not None:
        write_ablation_csv(rows, Path(out_dir) / ABLATION_CSV_NAME)
    for row in rows:
        logger.info(f"{row.variant}: mean_IoU={row.mean_IoU:.3f} sr50={row.sr50:.3f} sr75={row.sr75:.3f}")
    return rows


def write_ablation_csv(rows: List[AblationRow], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.model_dump())
