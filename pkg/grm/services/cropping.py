"""
Template / search cropping

A crop is the square of side factor·√(w·h) (pixels) centered on a box,
resampled bilinearly to the network resolution. Sampling uses half-pixel
centers: output pixel j samples crop coordinate (j + 0.5)·side/out. Source
coordinates outside the frame are clamped to the border pixel, which is the
same as padding by edge replication.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from grm.autograd.tensor import Tensor
from grm.core.errors import ShapeError, UsageError
from grm.schemas.config import CropConfig
from grm.schemas.geometry import BBox

MIN_SIDE_PX = 1e-3


@dataclass(frozen=True)
class CropRecord:
    """
    Affine map between frame pixels and a square crop

    Attributes:
        center_x, center_y: Crop center in frame pixels
        side: Crop side in frame pixels
        frame_width, frame_height: Frame size in pixels
    """
    center_x: float
    center_y: float
    side: float
    frame_width: int
    frame_height: int

    @property
    def origin(self) -> Tuple[float, float]:
        return self.center_x - self.side / 2.0, self.center_y - self.side / 2.0

    def to_frame(self, box: BBox) -> BBox:
        """Crop-normalized box -> frame-normalized box (clipped to the frame)"""
        x0, y0 = self.origin
        cx = (x0 + box.cx * self.side) / self.frame_width
        cy = (y0 + box.cy * self.side) / self.frame_height
        w = box.w * self.side / self.frame_width
        h = box.h * self.side / self.frame_height
        return BBox.from_unclipped(cx, cy, w, h)

    def to_crop(self, box: BBox) -> BBox:
        """Frame-normalized box -> crop-normalized box (clipped to the crop)"""
        x0, y0 = self.origin
        cx = (box.cx * self.frame_width - x0) / self.side
        cy = (box.cy * self.frame_height - y0) / self.side
        w = box.w * self.frame_width / self.side
        h = box.h * self.frame_height / self.side
        return BBox.from_unclipped(cx, cy, w, h)


def _sample_axis(start: float, side: float, out_size: int, limit: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower index, upper index and upper weight along one axis"""
    coords = start + (np.arange(out_size) + 0.5) * side / out_size - 0.5
    coords = np.clip(coords, 0.0, limit - 1)
    lower = np.floor(coords).astype(int)
    upper = np.minimum(lower + 1, limit - 1)
    return lower, upper, coords - lower


def crop_region(image: np.ndarray, center: Tuple[float, float], side: float, out_size: int) -> np.ndarray:
    """
    Bilinear crop of a 3×H×W image

    Args:
        image: Source frame
        center: Crop center (x, y) in pixels
        side: Crop side in pixels
        out_size: Output resolution

    Returns:
        3×out_size×out_size array
    """
    if image.ndim != 3:
        raise ShapeError(f"expected a C×H×W frame, got {image.shape}")
    if side < MIN_SIDE_PX:
        raise UsageError(f"degenerate crop side {side} px")
    _, height, width = image.shape
    x_lo, x_hi, wx = _sample_axis(center[0] - side / 2.0, side, out_size, width)
    y_lo, y_hi, wy = _sample_axis(center[1] - side / 2.0, side, out_size, height)

    top = image[:, y_lo][:, :, x_lo] * (1.0 - wx) + image[:, y_lo][:, :, x_hi] * wx
    bottom = image[:, y_hi][:, :, x_lo] * (1.0 - wx) + image[:, y_hi][:, :, x_hi] * wx
    return top * (1.0 - wy)[:, None] + bottom * wy[:, None]


def crop_side(box: BBox, frame_size: Tuple[int, int], factor: float) -> float:
    width, height = frame_size
    return factor * float(np.sqrt(box.w * width * box.h * height))


def crop_template(image: np.ndarray, box: BBox, cfg: CropConfig, out_size: int) -> Tensor:
    """Template crop: side template_factor·√(w·h) around the box center"""
    _, height, width = image.shape
    side = crop_side(box, (width, height), cfg.template_factor)
    return Tensor(crop_region(image, (box.cx * width, box.cy * height), side, out_size))


def crop_search(
    image: np.ndarray,
    prev_box: BBox,
    cfg: CropConfig,
    out_size: int,
    shift: Tuple[float, float] = (0.0, 0.0),
    scale: float = 1.0,
) -> Tuple[Tensor, CropRecord]:
    """
    Search crop: side search_factor·√(w·h) around the previous box

    Args:
        image: Current frame, 3×H×W
        prev_box: Previous (or jittered ground-truth) box in frame coordinates
        cfg: Crop factors
        out_size: Search resolution
        shift: Extra center offset in pixels (training jitter)
        scale: Extra side multiplier (training jitter)

    Returns:
        (search image, record mapping crop boxes back to the frame)
    """
    _, height, width = image.shape
    side = crop_side(prev_box, (width, height), cfg.search_factor) * scale
    record = CropRecord(
        center_x=prev_box.cx * width + shift[0],
        center_y=prev_box.cy * height + shift[1],
        side=side,
        frame_width=width,
        frame_height=height,
    )
    return Tensor(crop_region(image, (record.center_x, record.center_y), side, out_size)), record
