"""
Synthetic tracking scenarios

A scenario is a square canvas with one target rectangle following a smooth
random walk, optional distractor rectangles moving independently, and
optional additive pixel noise. Everything is derived from the scenario seed,
so (spec) -> frames is a pure function.

Motion model (per object, per frame):
    v ← 0.8·v + 0.2·amplitude·N(0, I), then |v| clipped to amplitude
    p ← p + v, reflected at the canvas border so the object stays inside

A pixel belongs to a rectangle when its center lies inside it. Distractors
are drawn first; the target is drawn last and is never occluded.
"""
import hashlib
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from grm.core.errors import ScenarioError
from grm.schemas.config import ObjectSpec, ScenarioPreset, ScenarioSuite, SyntheticScenario
from grm.schemas.geometry import BBox

logger = logging.getLogger(__name__)

SMOOTHING = 0.8


@dataclass
class Frame:
    """
    Attributes:
        image: 3×H×W float64 array with values in [0, 1]
        gt_box: Ground-truth box normalized to the frame
    """
    image: np.ndarray
    gt_box: Optional[BBox] = None

    @property
    def size(self) -> Tuple[int, int]:
        """(width, height) in pixels"""
        return self.image.shape[2], self.image.shape[1]


def _object_track(
    spec: ObjectSpec,
    canvas: int,
    frame_count: int,
    rng: np.random.Generator,
    label: str,
) -> np.ndarray:
    """frame_count×2 array of object centers in pixels"""
    half = np.array(spec.size, dtype=np.float64) / 2.0
    if np.any(2.0 * half > canvas):
        raise ScenarioError(f"{label} of size {spec.size} does not fit a {canvas}px canvas")
    low, high = half, canvas - half

    position = rng.uniform(low, high)
    velocity = np.zeros(2)
    centers = np.empty((frame_count, 2))
    for t in range(frame_count):
        centers[t] = position
        step = rng.normal(size=2)
        velocity = SMOOTHING * velocity + (1.0 - SMOOTHING) * spec.motion_amplitude * step
        speed = np.linalg.norm(velocity)
        if speed > spec.motion_amplitude:
            velocity *= spec.motion_amplitude / speed
        position = position + velocity
        for axis in range(2):
            if position[axis] < low[axis]:
                position[axis] = 2 * low[axis] - position[axis]
                velocity[axis] = -velocity[axis]
            elif position[axis] > high[axis]:
                position[axis] = 2 * high[axis] - position[axis]
                velocity[axis] = -velocity[axis]
        position = np.clip(position, low, high)
    return centers


def _paint(image: np.ndarray, center: np.ndarray, size: Tuple[float, float], color: Tuple[float, ...]) -> None:
    canvas = image.shape[1]
    pixel_centers = np.arange(canvas) + 0.5
    x0, x1 = center[0] - size[0] / 2.0, center[0] + size[0] / 2.0
    y0, y1 = center[1] - size[1] / 2.0, center[1] + size[1] / 2.0
    cols = (pixel_centers >= x0) & (pixel_centers < x1)
    rows = (pixel_centers >= y0) & (pixel_centers < y1)
    region = np.ix_(rows, cols)
    for channel in range(3):
        image[channel][region] = color[channel]


def generate_scenario(spec: SyntheticScenario) -> List[Frame]:
    """
    Render every frame of a scenario

    Args:
        spec: Validated scenario specification

    Returns:
        spec.frame_count frames with exact ground-truth boxes

    Raises:
        ScenarioError: an object does not fit on the canvas
    """
    rng = np.random.default_rng(spec.seed)
    canvas = spec.canvas_size
    if np.allclose(spec.target.color, spec.background):
        logger.warning(f"Scenario seed {spec.seed}: target color equals the background")
    target_track = _object_track(spec.target, canvas, spec.frame_count, rng, "target")
    distractor_tracks = [
        _object_track(d, canvas, spec.frame_count, rng, f"distractor {i}")
        for i, d in enumerate(spec.distractors)
    ]

    frames: List[Frame] = []
    tw, th = spec.target.size
    for t in range(spec.frame_count):
        image = np.empty((3, canvas, canvas))
        image[:] = np.array(spec.background)[:, None, None]
        for distractor, track in zip(spec.distractors, distractor_tracks):
            _paint(image, track[t], distractor.size, distractor.color)
        _paint(image, target_track[t], spec.target.size, spec.target.color)
        if spec.noise > 0:
            image = np.clip(image + rng.normal(0.0, spec.noise, size=image.shape), 0.0, 1.0)
        cx, cy = target_track[t]
        gt = BBox(cx=cx / canvas, cy=cy / canvas, w=tw / canvas, h=th / canvas)
        frames.append(Frame(image=image, gt_box=gt))
    return frames


def _random_color(rng: np.random.Generator, low: float, high: float) -> Tuple[float, float, float]:
    return tuple(float(v) for v in rng.uniform(low, high, size=3))


def preset_scenario(preset: ScenarioPreset, seed: int, frame_count: int = 30, canvas_size: int = 128) -> SyntheticScenario:
    """
    Scenario of a named family

    easy:        one target, no distractors, light noise
    distractor:  three rectangles whose color and size are close to the target's
    """
    rng = np.random.default_rng(seed)
    background = _random_color(rng, 0.0, 0.25)
    color = _random_color(rng, 0.45, 1.0)
    side = canvas_size * rng.uniform(0.12, 0.2, size=2)
    target = ObjectSpec(color=color, size=(float(side[0]), float(side[1])), motion_amplitude=2.0)

    distractors: List[ObjectSpec] = []
    noise = 0.02
    if preset == ScenarioPreset.DISTRACTOR:
        noise = 0.03
        for _ in range(3):
            jitter = np.clip(np.array(color) + rng.normal(0.0, 0.08, size=3), 0.0, 1.0)
            scale = rng.uniform(0.8, 1.2, size=2)
            distractors.append(ObjectSpec(
                color=tuple(float(v) for v in jitter),
                size=(float(side[0] * scale[0]), float(side[1] * scale[1])),
                motion_amplitude=3.0,
            ))
    return SyntheticScenario(
        seed=seed,
        frame_count=frame_count,
        canvas_size=canvas_size,
        background=background,
        target=target,
        distractors=distractors,
        noise=noise,
    )


def build_suite(suite: ScenarioSuite) -> List[SyntheticScenario]:
    """One scenario per seed of the suite"""
    return [
        preset_scenario(suite.preset, seed, suite.frame_count, suite.canvas_size)
        for seed in suite.seeds()
    ]


def scenario_fingerprint(spec: SyntheticScenario, frames: List[Frame]) -> dict:
    """SHA-256 of the canonical spec JSON and of the first frame's bytes"""
    spec_json = spec.model_dump_json().encode("utf-8")
    return {
        "spec_sha256": hashlib.sha256(spec_json).hexdigest(),
        "first_frame_sha256": hashlib.sha256(frames[0].image.astype("<f8").tobytes()).hexdigest(),
    }
