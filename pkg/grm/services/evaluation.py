"""
Tracking evaluation

Each scenario is tracked from its ground-truth first box; frames after the
first are scored by IoU. Reported metrics:

    mean_IoU   average overlap: per-sequence mean IoU, averaged over sequences
    sr50/sr75  fraction of scored frames with IoU > 0.5 / 0.75
    ea_fraction_per_layer  mean share of search tokens assigned E_A per layer
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from grm.models.relation import classify_layer_form
from grm.schemas.config import CropConfig, SyntheticScenario
from grm.schemas.reports import MetricsReport
from grm.services.checkpoint import Checkpoint
from grm.services.scenario_generator import generate_scenario
from grm.services.tracker import GRMTracker, Tracker

logger = logging.getLogger(__name__)

SUCCESS_THRESHOLDS = (0.5, 0.75)


def success_rate(ious: np.ndarray, threshold: float) -> float:
    if ious.size == 0:
        return 0.0
    return float(np.mean(ious > threshold))


def evaluate(tracker_factory: Callable[[], Tracker], scenarios: Sequence[SyntheticScenario]) -> MetricsReport:
    """
    Run a tracker over every scenario and aggregate metrics

    Args:
        tracker_factory: Builds a fresh tracker per sequence
        scenarios: Evaluation scenarios (disjoint from training seeds)

    Returns:
        MetricsReport
    """
    sequence_means: List[float] = []
    all_ious: List[float] = []
    layer_fractions: Dict[int, List[float]] = {}

    for scenario in scenarios:
        frames = generate_scenario(scenario)
        tracker = tracker_factory()
        tracker.initialize(frames[0], frames[0].gt_box)
        ious = []
        for frame in frames[1:]:
            result = tracker.track(frame)
            ious.append(result.box.iou(frame.gt_box))
            for layer, division in enumerate(result.divisions, start=1):
                layer_fractions.setdefault(layer, []).append(division.ea_fraction())
        sequence_means.append(float(np.mean(ious)))
        all_ious.extend(ious)
        logger.debug(f"Scenario seed {scenario.seed}: mean IoU {sequence_means[-1]:.3f}")

    ious_array = np.array(all_ious)
    depth = max(layer_fractions, default=0)
    fractions: List[Optional[float]] = [
        float(np.mean(layer_fractions[i])) if i in layer_fractions else None for i in range(1, depth + 1)
    ]
    report = MetricsReport(
        mean_IoU=float(np.mean(sequence_means)) if sequence_means else 0.0,
        sr50=success_rate(ious_array, SUCCESS_THRESHOLDS[0]),
        sr75=success_rate(ious_array, SUCCESS_THRESHOLDS[1]),
        ea_fraction_per_layer=fractions,
        layer_forms=[classify_layer_form(f).value if f is not None else None for f in fractions],
        sequences=len(sequence_means),
        frames=len(all_ious),
    )
    logger.info(f"Evaluated {report.sequences} sequences: mean_IoU={report.mean_IoU:.3f}, "
                f"sr50={report.sr50:.3f}, sr75={report.sr75:.3f}")
    return report


def evaluate_checkpoint(ckpt: Checkpoint, scenarios: Sequence[SyntheticScenario], crop: CropConfig) -> MetricsReport:
    """evaluate() with GRMTracker over one network built from the checkpoint"""
    net = ckpt.to_network()
    return evaluate(lambda: GRMTracker(net, crop), scenarios)
