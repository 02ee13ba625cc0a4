"""
Frame-by-frame tracking

GRMTracker freezes the template tokens of the first frame and then, for each
new frame, crops a search region around the previous box, runs the encoder
with eval-mode (noise-free) divisions, decodes the best-scoring box and maps
it back to frame coordinates. The template is never updated.

OracleTracker and FixedBoxTracker implement the same protocol for harness
self-tests of the evaluation path.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Protocol, Tuple

from grm.autograd.tensor import no_grad
from grm.core.errors import UsageError
from grm.models.embedding import TokenBuffer, TokenOrigin
from grm.models.head import decode_box
from grm.models.network import GRMNetwork
from grm.models.relation import Division
from grm.schemas.config import CropConfig, GumbelConfig, GumbelMode
from grm.schemas.geometry import BBox
from grm.services.cropping import CropRecord, crop_search, crop_template
from grm.services.scenario_generator import Frame

logger = logging.getLogger(__name__)

EVAL_GUMBEL = GumbelConfig(mode=GumbelMode.EVAL)
# a predicted box thinner than this (frame pixels) is not a usable estimate
MIN_BOX_PX = 1.0


@dataclass
class TrackResult:
    box: BBox
    divisions: List[Division] = field(default_factory=list)


class Tracker(Protocol):
    def initialize(self, frame: Frame, box: BBox) -> None:
        ...

    def track(self, frame: Frame) -> TrackResult:
        ...


@dataclass
class TrackState:
    """
    Attributes:
        template: Frozen template tokens from the first frame
        prev_box: Last predicted box, frame coordinates
        crop_record: Geometry of the last search crop
        frame_index: Frames tracked since initialization
    """
    template: TokenBuffer
    prev_box: BBox
    crop_record: Optional[CropRecord] = None
    frame_index: int = 0


def _is_usable(box: BBox, frame_size: Tuple[int, int]) -> bool:
    width, height = frame_size
    return box.w * width >= MIN_BOX_PX and box.h * height >= MIN_BOX_PX


def init_state(net: GRMNetwork, frame: Frame, box: BBox, crop: CropConfig) -> TrackState:
    with no_grad():
        image = crop_template(frame.image, box, crop, net.cfg.patch.template_size)
        template = net.embed(image, TokenOrigin.TEMPLATE)
    return TrackState(template=template, prev_box=box)


def track_step(net: GRMNetwork, state: TrackState, frame: Frame, crop: CropConfig) -> Tuple[BBox, List[Division]]:
    """
    Locate the target in one frame and update the state

    A decoded box that falls off the frame, or clips to less than
    MIN_BOX_PX on a side, is discarded and the previous box is held.

    Returns:
        (box in frame coordinates, division of every encoder layer)
    """
    with no_grad():
        search, record = crop_search(frame.image, state.prev_box, crop, net.cfg.patch.search_size)
        result = net.predict(state.template, search, EVAL_GUMBEL)
    box = record.to_frame(decode_box(result.head))
    if not _is_usable(box, frame.size):
        logger.debug(f"Frame {state.frame_index + 1}: decoded box {box.as_array()} is off the frame, "
                     f"holding the last box")
        box = state.prev_box
    state.prev_box = box
    state.crop_record = record
    state.frame_index += 1
    return box, result.divisions


class GRMTracker:
    """Tracker protocol around a network"""

    def __init__(self, net: GRMNetwork, crop: CropConfig):
        self.net = net
        self.crop = crop
        self.state: Optional[TrackState] = None

    def initialize(self, frame: Frame, box: BBox) -> None:
        self.state = init_state(self.net, frame, box, self.crop)

    def track(self, frame: Frame) -> TrackResult:
        if self.state is None:
            raise UsageError("tracker used before initialize()")
        box, divisions = track_step(self.net, self.state, frame, self.crop)
        return TrackResult(box=box, divisions=divisions)


class OracleTracker:
    """Returns the ground truth of every frame"""

    def initialize(self, frame: Frame, box: BBox) -> None:
        pass

    def track(self, frame: Frame) -> TrackResult:
        if frame.gt_box is None:
            raise UsageError("oracle tracker needs ground-truth boxes")
        return TrackResult(box=frame.gt_box)


class FixedBoxTracker:
    """Returns the same box for every frame"""

    def __init__(self, box: BBox):
        self.box = box

    def initialize(self, frame: Frame, box: BBox) -> None:
        pass

    def track(self, frame: Frame) -> TrackResult:
        return TrackResult(box=self.box)
