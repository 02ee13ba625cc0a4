"""
Box geometry

BBox is always normalized to its reference area: a search crop for head
outputs, the whole frame for ground truth and tracker outputs.
"""
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field


class BBox(BaseModel):
    """Axis-aligned box (cx, cy, w, h) in normalized coordinates"""
    model_config = ConfigDict(frozen=True)

    cx: float = Field(..., ge=0.0, le=1.0)
    cy: float = Field(..., ge=0.0, le=1.0)
    w: float = Field(..., gt=0.0, le=1.0)
    h: float = Field(..., gt=0.0, le=1.0)

    @classmethod
    def from_unclipped(cls, cx: float, cy: float, w: float, h: float, min_size: float = 1e-6) -> "BBox":
        """
        Intersect an arbitrary box with the unit square

        A box that misses the square entirely collapses to a `min_size` box at
        the nearest point inside it.
        """
        x0, x1 = _clip_interval(cx - w / 2.0, cx + w / 2.0, cx, min_size)
        y0, y1 = _clip_interval(cy - h / 2.0, cy + h / 2.0, cy, min_size)
        return cls(cx=(x0 + x1) / 2.0, cy=(y0 + y1) / 2.0, w=x1 - x0, h=y1 - y0)

    def corners(self) -> Tuple[float, float, float, float]:
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @property
    def area(self) -> float:
        return self.w * self.h

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def iou(self, other: "BBox") -> float:
        ax0, ay0, ax1, ay1 = self.corners()
        bx0, by0, bx1, by1 = other.corners()
        inter = max(0.0, min(ax1, bx1) - max(ax0, bx0)) * max(0.0, min(ay1, by1) - max(ay0, by0))
        union = self.area + other.area - inter
        return float(inter / union)


def _clip_interval(low: float, high: float, center: float, min_size: float) -> Tuple[float, float]:
    low, high = max(low, 0.0), min(high, 1.0)
    if high - low >= min_size:
        return low, high
    start = min(max(center - min_size / 2.0, 0.0), 1.0 - min_size)
    return start, start + min_size
