"""Per-layer division dumps."""

import json

import numpy as np
import pytest

from grm.autograd.tensor import Tensor
from grm.core.errors import UsageError
from grm.models.network import GRMNetwork
from grm.models.relation import Division
from grm.schemas.config import CropConfig, ScenarioPreset
from grm.services.division_dump import division_heatmap, dump_divisions, read_pgm, write_pgm
from grm.services.scenario_generator import preset_scenario
from tests.factories import tiny_model_config


def create_scenario():
    return preset_scenario(ScenarioPreset.EASY, seed=0, frame_count=4, canvas_size=64)


class TestPgm:
    def test_round_trip(self, tmp_path):
        image = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
        write_pgm(tmp_path / "map.pgm", image)
        assert (tmp_path / "map.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
        np.testing.assert_array_equal(read_pgm(tmp_path / "map.pgm"), image)

    def test_rejects_other_formats(self, tmp_path):
        (tmp_path / "map.pgm").write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(UsageError):
            read_pgm(tmp_path / "map.pgm")

    def test_heatmap(self):
        D = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
        division = Division(pi=Tensor(np.full((4, 2), 0.5)), D=D, soft=None, assignment=Tensor(D))
        np.testing.assert_array_equal(division_heatmap(division, 2), [[0, 255], [255, 0]])
        with pytest.raises(UsageError):
            division_heatmap(division, 3)


class TestDumpDivisions:
    def test_one_stream_layers_are_all_A(self, tmp_path):
        net = GRMNetwork.initialize(tiny_model_config(policy="one_stream"), 0)
        records = dump_divisions(net, create_scenario(), 2, CropConfig(), tmp_path)
        assert [r.layer for r in records] == [1, 2]
        for layer in (1, 2):
            heatmap = read_pgm(tmp_path / f"layer{layer}.pgm")
            assert heatmap.shape == (4, 4)
            assert np.all(heatmap == 255)

    def test_two_stream_layers(self, tmp_path):
        """All but the last layer keep search tokens in E_S."""
        net = GRMNetwork.initialize(tiny_model_config(depth=3, policy="two_stream"), 0)
        dump_divisions(net, create_scenario(), 1, CropConfig(), tmp_path)
        assert np.all(read_pgm(tmp_path / "layer1.pgm") == 0)
        assert np.all(read_pgm(tmp_path / "layer2.pgm") == 0)
        assert np.all(read_pgm(tmp_path / "layer3.pgm") == 255)

    def test_json_records(self, tmp_path):
        net = GRMNetwork.initialize(tiny_model_config(), 0)
        dump_divisions(net, create_scenario(), 3, CropConfig(), tmp_path)
        record = json.loads((tmp_path / "layer2.json").read_text())
        assert record["layer"] == 2
        assert len(record["pi"]) == 16 and len(record["D"]) == 16
        assert set(record["D"]) <= {0, 1}
        assert record["form"] in {"two_stream", "intermediate", "one_stream"}

    @pytest.mark.parametrize("frame_index", [0, 4])
    def test_frame_range(self, tmp_path, frame_index):
        net = GRMNetwork.initialize(tiny_model_config(), 0)
        with pytest.raises(UsageError):
            dump_divisions(net, create_scenario(), frame_index, CropConfig(), tmp_path)
