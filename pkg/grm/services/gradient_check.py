"""
End-to-end gradient check of a small tracker model

The closure runs the whole pipeline (embedding, encoder with one forced and
one adaptive layer, head, focal + GIoU + L1 loss) on fixed random images.
Divisions use relaxed Gumbel sampling with frozen noise: the same backward
rule as training, but a forward pass that is smooth in the predictor
parameters, so finite differences see the division path too.
"""
import logging
import re
from typing import Dict, List

import numpy as np

from grm.autograd.gradcheck import GradCheckReport, finite_diff_check
from grm.autograd.tensor import Tensor
from grm.core.config import settings
from grm.core.errors import UsageError
from grm.models.losses import compute_losses
from grm.models.network import GRMNetwork
from grm.models.relation import SCHEME_COLUMNS
from grm.schemas.config import GumbelConfig, GumbelMode, LossConfig, ModelConfig, PatchConfig
from grm.schemas.geometry import BBox
from grm.schemas.reports import GradCheckRow

logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_STEP = 1e-5
# per-entry denominator floor; gradients below it are compared absolutely
GRADCHECK_ABS_FLOOR = 1e-8

EMBEDDING_GROUP = "embedding"
DIVISION_MLP_GROUP = "division_mlp"
HEAD_GROUP = "head"
_LAYER_NAME = re.compile(r"^encoder\.(layer\d+)\.(\w+)\.")

# C=16, L=2, N_z=4, N_x=16
SCALES: Dict[str, ModelConfig] = {
    "tiny": ModelConfig(
        patch=PatchConfig(patch_size=8, embed_dim=16, template_size=16, search_size=32),
        depth=2,
        num_heads=2,
        init_std=0.2,
    ),
}

CHECK_TARGET = BBox(cx=0.55, cy=0.45, w=0.35, h=0.3)


def model_gradcheck(seed: int = 0, scale: str = "tiny") -> GradCheckReport:
    """
    Check every parameter of a freshly initialized model

    Args:
        seed: Seeds the weights, the input images, the frozen noise and the
            choice of checked entries
        scale: Model size preset

    Returns:
        GradCheckReport with one entry per parameter
    """
    if scale not in SCALES:
        raise UsageError(f"unknown gradient check scale '{scale}'; expected one of {sorted(SCALES)}")
    cfg = SCALES[scale]
    net = GRMNetwork.initialize(cfg, seed)
    rng = np.random.default_rng(seed)
    template = Tensor(rng.uniform(size=(3, cfg.patch.template_size, cfg.patch.template_size)))
    search = Tensor(rng.uniform(size=(3, cfg.patch.search_size, cfg.patch.search_size)))
    num_categories = len(SCHEME_COLUMNS[cfg.scheme])
    noise = {
        layer: rng.gumbel(0.0, 1.0, size=(cfg.patch.num_search_tokens, num_categories))
        for layer in cfg.predictor_layers()
    }
    gumbel = GumbelConfig(mode=GumbelMode.RELAXED)
    loss_cfg = LossConfig()

    def closure() -> Tensor:
        result = net.forward(template, search, gumbel, noise=noise)
        return compute_losses(result.head, CHECK_TARGET, loss_cfg).total

    report = finite_diff_check(
        closure,
        dict(net.store.items()),
        h=GRADCHECK_STEP,
        samples_per_param=settings.GRADCHECK_SAMPLES_PER_PARAM,
        seed=seed,
        abs_floor=GRADCHECK_ABS_FLOOR,
    )
    skipped = sum(report.skipped_entries.values())
    logger.info(f"Gradient check ({scale}, seed {seed}): {len(report.errors)} parameters, "
                f"max rel. error {report.max_error:.2e}, {skipped} entries next to a kink skipped")
    return report


def parameter_group(name: str) -> str:
    """
    Group of a parameter name

    embed.*                      -> embedding
    encoder.layer{i}.predictor.* -> division_mlp
    encoder.layer{i}.*           -> layer{i}
    head.*                       -> head
    """
    if name.startswith("embed."):
        return EMBEDDING_GROUP
    if name.startswith("head."):
        return HEAD_GROUP
    match = _LAYER_NAME.match(name)
    if match is None:
        raise UsageError(f"parameter '{name}' belongs to no gradient check group")
    return DIVISION_MLP_GROUP if match.group(2) == "predictor" else match.group(1)


def group_rows(report: GradCheckReport, tolerance: float = GRADCHECK_TOLERANCE) -> List[GradCheckRow]:
    """
    One row per parameter group, in order of first appearance

    A group's error is the worst entry over all of its parameters.
    """
    members: Dict[str, List[str]] = {}
    for name in report.errors:
        members.setdefault(parameter_group(name), []).append(name)

    rows = []
    for group, names in members.items():
        worst = max(names, key=lambda n: report.errors[n])
        error = report.errors[worst]
        rows.append(GradCheckRow(
            group=group,
            parameters=len(names),
            entries=sum(report.checked_entries.get(n, 0) for n in names),
            rel_error=error,
            worst_parameter=worst,
            passed=error < tolerance,
        ))
    return rows
