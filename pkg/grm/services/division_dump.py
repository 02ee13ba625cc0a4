"""
Division dumps

For one frame of a scenario, writes per encoder layer:

    layer{i}.json  DivisionRecord {layer, pi, D, categories, form}
    layer{i}.pgm   binary P5 image of the search grid; E_S cells 0, E_A cells 255
"""
import json
import logging
from pathlib import Path
from typing import List, Union

import numpy as np

from grm.core.errors import UsageError
from grm.models.network import GRMNetwork
from grm.models.relation import CAT_A, Division
from grm.schemas.config import CropConfig, SyntheticScenario
from grm.schemas.reports import DivisionRecord
from grm.services.scenario_generator import generate_scenario
from grm.services.tracker import init_state, track_step

logger = logging.getLogger(__name__)


def division_heatmap(division: Division, grid: int) -> np.ndarray:
    """grid×grid uint8 map, 255 where the token is in E_A"""
    if division.D.shape[0] != grid * grid:
        raise UsageError(f"{division.D.shape[0]} tokens do not fill a {grid}×{grid} grid")
    cells = np.where(division.category_columns() == CAT_A, 255, 0).astype(np.uint8)
    return cells.reshape(grid, grid)


def write_pgm(path: Union[str, Path], image: np.ndarray) -> None:
    """Binary PGM (P5), maxval 255"""
    height, width = image.shape
    header = f"P5\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + image.astype(np.uint8).tobytes())


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, dims, maxval, payload = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise UsageError(f"{path} is not an 8-bit binary PGM")
    width, height = (int(v) for v in dims.split())
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def dump_divisions(
    net: GRMNetwork,
    scenario: SyntheticScenario,
    frame_index: int,
    crop: CropConfig,
    out_dir: Union[str, Path],
) -> List[DivisionRecord]:
    """
    Track up to `frame_index` and dump the divisions used on that frame

    Raises:
        UsageError: frame_index outside 1..frame_count-1 (frame 0 initializes the template)
    """
    frames = generate_scenario(scenario)
    if not 1 <= frame_index < len(frames):
        raise UsageError(f"frame {frame_index} outside 1..{len(frames) - 1}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    state = init_state(net, frames[0], frames[0].gt_box, crop)
    divisions: List[Division] = []
    for frame in frames[1:frame_index + 1]:
        _, divisions = track_step(net, state, frame, crop)

    grid = net.cfg.patch.search_grid
    records = []
    for layer, division in enumerate(divisions, start=1):
        record = division.to_record(layer)
        (out_dir / f"layer{layer}.json").write_text(json.dumps(record.model_dump(), indent=2) + "\n")
        write_pgm(out_dir / f"layer{layer}.pgm", division_heatmap(division, grid))
        records.append(record)
    logger.info(f"Wrote {len(records)} division dumps for frame {frame_index} to {out_dir}")
    return records
