"""
Center / offset / size prediction head

Three convolutional branches run on the C×h×w map of the final search
tokens. Each branch is four Conv3×3-Norm-ReLU stages halving the channels
(C -> C/2 -> C/4 -> C/8 -> C/16) followed by a 1×1 output convolution; all
three outputs go through a sigmoid. The norm is per channel over spatial
positions, so a single pair works as a batch.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from grm.autograd import ops
from grm.autograd.tensor import Tensor
from grm.core.errors import ShapeError
from grm.schemas.geometry import BBox

BRANCHES = ("center", "offset", "size")
BRANCH_CHANNELS = {"center": 1, "offset": 2, "size": 2}
NUM_STAGES = 4
MIN_SIZE = 1e-6


@dataclass
class ConvStage:
    kernel: Tensor
    gamma: Tensor
    beta: Tensor


@dataclass
class BranchParams:
    stages: List[ConvStage]
    out_kernel: Tensor
    out_bias: Tensor


@dataclass
class HeadParams:
    center: BranchParams
    offset: BranchParams
    size: BranchParams


@dataclass
class HeadOutput:
    """
    Attributes:
        center_scores: 1×h×w target-center confidence
        offsets: 2×h×w sub-cell offsets (x, y)
        sizes: 2×h×w box width/height relative to the search crop
    """
    center_scores: Tensor
    offsets: Tensor
    sizes: Tensor

    def __post_init__(self) -> None:
        grid = self.center_scores.shape[1:]
        if (
            self.center_scores.shape[0] != 1
            or self.offsets.shape != (2,) + grid
            or self.sizes.shape != (2,) + grid
        ):
            raise ShapeError(
                f"inconsistent head output shapes {self.center_scores.shape}, "
                f"{self.offsets.shape}, {self.sizes.shape}"
            )

    @property
    def grid(self) -> Tuple[int, int]:
        return self.center_scores.shape[1], self.center_scores.shape[2]


def _branch(feat_map: Tensor, params: BranchParams) -> Tensor:
    x = feat_map
    for stage in params.stages:
        x = ops.relu(ops.channel_norm(ops.conv2d(x, stage.kernel, stride=1, pad=1), stage.gamma, stage.beta))
    return ops.sigmoid(ops.conv2d(x, params.out_kernel, stride=1, pad=0, bias=params.out_bias))


def head_forward(feat_map: Tensor, params: HeadParams) -> HeadOutput:
    if feat_map.ndim != 3:
        raise ShapeError(f"head expects a C×h×w feature map, got {feat_map.shape}")
    return HeadOutput(
        center_scores=_branch(feat_map, params.center),
        offsets=_branch(feat_map, params.offset),
        sizes=_branch(feat_map, params.size),
    )


def peak_index(scores: np.ndarray) -> Tuple[int, int]:
    """Row-major first argmax of an h×w (or 1×h×w) map"""
    scores = scores.reshape(scores.shape[-2:])
    row, col = divmod(int(np.argmax(scores)), scores.shape[1])
    return row, col


def decode_box(out: HeadOutput) -> BBox:
    """
    Box at the highest-scoring cell, normalized to the search crop

    cx = (c* + offset_x) / w, cy = (r* + offset_y) / h, size read at (r*, c*)
    """
    h, w = out.grid
    row, col = peak_index(out.center_scores.data)
    off_x, off_y = out.offsets.data[:, row, col]
    size_w, size_h = out.sizes.data[:, row, col]
    return BBox(
        cx=min((col + off_x) / w, 1.0),
        cy=min((row + off_y) / h, 1.0),
        w=float(np.clip(size_w, MIN_SIZE, 1.0)),
        h=float(np.clip(size_h, MIN_SIZE, 1.0)),
    )


def box_at(out: HeadOutput, row: int, col: int) -> Tensor:
    """Differentiable (cx, cy, w, h) read at one cell"""
    h, w = out.grid
    offsets = out.offsets[:, row, col]
    scale = np.array([1.0 / w, 1.0 / h])
    center = (offsets + np.array([col, row], dtype=np.float64)) * scale
    return ops.concat([center, out.sizes[:, row, col]], axis=0)
