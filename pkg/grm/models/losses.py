"""
Training targets and losses

    L_total = λ_center·L_focal + λ_giou·L_giou + λ_l1·L_l1

The focal term is the penalty-reduced pixelwise variant for Gaussian
heatmaps. GIoU and L1 are evaluated on the box read at one cell: the
ground-truth peak cell by default (anchor "gt"), or the predicted argmax
(anchor "pred"). Either way the cell index is a constant, so the regression
terms stay differentiable.
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from grm.autograd import ops
from grm.autograd.tensor import Tensor
from grm.core.errors import UsageError
from grm.models.head import HeadOutput, box_at, peak_index
from grm.schemas.config import LossConfig, LossWeights, RegressionAnchor
from grm.schemas.geometry import BBox

PROB_EPS = 1e-7

BoxLike = Union[BBox, Tensor]


def gaussian_target(center: Tuple[float, float], grid: Tuple[int, int], sigma_cells: float) -> Tensor:
    """
    Heatmap exp(−((c − c_gt)² + (r − r_gt)²) / 2σ²) on an h×w grid

    (r_gt, c_gt) is the real-valued grid position of the normalized center,
    so a center lying on a cell center gives that cell the value 1.

    Raises:
        UsageError: center outside [0,1]² or sigma <= 0
    """
    cx, cy = center
    if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
        raise UsageError(f"heatmap center {center} outside the unit square")
    if sigma_cells <= 0:
        raise UsageError(f"sigma must be positive, got {sigma_cells}")
    h, w = grid
    c_gt, r_gt = cx * w - 0.5, cy * h - 0.5
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    heat = np.exp(-((cols - c_gt) ** 2 + (rows - r_gt) ** 2) / (2.0 * sigma_cells ** 2))
    return Tensor(heat[None])


def peak_cell(center: Tuple[float, float], grid: Tuple[int, int]) -> Tuple[int, int]:
    """Grid cell (row, col) containing a normalized center"""
    cx, cy = center
    h, w = grid
    return min(int(np.floor(cy * h)), h - 1), min(int(np.floor(cx * w)), w - 1)


def target_sigma(gt: BBox, grid: Tuple[int, int], cfg: LossConfig) -> float:
    h, w = grid
    mean_side = 0.5 * (gt.w * w + gt.h * h)
    return max(cfg.sigma_factor * mean_side, cfg.sigma_floor)


def training_heatmap(gt: BBox, grid: Tuple[int, int], cfg: LossConfig) -> Tensor:
    """Gaussian centered on the peak cell's center: exactly one cell equals 1"""
    h, w = grid
    row, col = peak_cell((gt.cx, gt.cy), grid)
    return gaussian_target(((col + 0.5) / w, (row + 0.5) / h), grid, target_sigma(gt, grid, cfg))


def focal_loss(scores: Tensor, target: Union[Tensor, np.ndarray], alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """
    Penalty-reduced focal loss

        target == 1:  −(1 − p)^α · log p
        elsewhere:    −(1 − t)^β · p^α · log(1 − p)

    summed over cells and divided by the number of target-1 cells (at least 1).
    """
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if target.shape != scores.shape:
        raise UsageError(f"target {target.shape} does not match scores {scores.shape}")
    positive = (target == 1.0).astype(np.float64)
    negative_weight = (1.0 - positive) * (1.0 - target) ** beta

    p = ops.clamp(scores, PROB_EPS, 1.0 - PROB_EPS)
    pos_term = ops.power(1.0 - p, alpha) * ops.log(p) * positive
    neg_term = ops.power(p, alpha) * ops.log(1.0 - p) * negative_weight
    total = ops.tensor_sum(pos_term) + ops.tensor_sum(neg_term)
    return total * (-1.0 / max(1.0, float(positive.sum())))


def _box_tensor(box: BoxLike) -> Tensor:
    if isinstance(box, BBox):
        return Tensor(box.as_array())
    if box.shape != (4,):
        raise UsageError(f"box tensor must have shape (4,), got {box.shape}")
    return box


def _corners(box: Tensor) -> Tuple[Tensor, Tensor, Tensor, Tensor]:
    center, size = box[0:2], box[2:4]
    low = center - size * 0.5
    high = center + size * 0.5
    return low[0], low[1], high[0], high[1]


def giou_loss(pred: BoxLike, gt: BoxLike) -> Tensor:
    """
    1 − GIoU(pred, gt), GIoU = IoU − |hull \\ union| / |hull|

    Raises:
        UsageError: gt has zero area
    """
    pred_t, gt_t = _box_tensor(pred), _box_tensor(gt)
    if gt_t.data[2] * gt_t.data[3] <= 0:
        raise UsageError("ground-truth box has zero area")
    px0, py0, px1, py1 = _corners(pred_t)
    gx0, gy0, gx1, gy1 = _corners(gt_t)

    inter_w = ops.clamp(ops.minimum(px1, gx1) - ops.maximum(px0, gx0), low=0.0)
    inter_h = ops.clamp(ops.minimum(py1, gy1) - ops.maximum(py0, gy0), low=0.0)
    inter = inter_w * inter_h
    union = pred_t[2] * pred_t[3] + gt_t[2] * gt_t[3] - inter
    hull = (ops.maximum(px1, gx1) - ops.minimum(px0, gx0)) * (ops.maximum(py1, gy1) - ops.minimum(py0, gy0))
    giou = inter / union - (hull - union) / hull
    return 1.0 - giou


def l1_loss(pred: BoxLike, gt: BoxLike) -> Tensor:
    """Mean absolute difference over (cx, cy, w, h)"""
    return ops.mean(ops.abs_(_box_tensor(pred) - _box_tensor(gt)))


@dataclass
class LossTerms:
    total: Tensor
    focal: Tensor
    giou: Tensor
    l1: Tensor
    anchor_cell: Tuple[int, int]

    def as_floats(self) -> dict:
        return {
            "total": self.total.item(),
            "focal": self.focal.item(),
            "giou": self.giou.item(),
            "l1": self.l1.item(),
        }


def compute_losses(out: HeadOutput, gt: BBox, cfg: Optional[LossConfig] = None) -> LossTerms:
    """
    All three loss terms and their weighted sum

    Args:
        out: Head output on the search crop
        gt: Ground truth box normalized to the search crop
        cfg: Weights, focal parameters, sigma rule and regression anchor
    """
    cfg = cfg or LossConfig()
    grid = out.grid
    focal = focal_loss(out.center_scores, training_heatmap(gt, grid, cfg), cfg.focal_alpha, cfg.focal_beta)

    if cfg.anchor == RegressionAnchor.GT:
        cell = peak_cell((gt.cx, gt.cy), grid)
    else:
        cell = peak_index(out.center_scores.data)
    pred_box = box_at(out, *cell)
    giou = giou_loss(pred_box, gt)
    l1 = l1_loss(pred_box, gt)

    weights = cfg.weights
    total = focal * weights.lambda_center + giou * weights.lambda_giou + l1 * weights.lambda_l1
    return LossTerms(total=total, focal=focal, giou=giou, l1=l1, anchor_cell=cell)


def total_loss(out: HeadOutput, gt: BBox, weights: LossWeights, cfg: Optional[LossConfig] = None) -> Tensor:
    """λ_center·focal + λ_giou·GIoU + λ_l1·L1 (see compute_losses)"""
    cfg = (cfg or LossConfig()).model_copy(update={"weights": weights})
    return compute_losses(out, gt, cfg).total
