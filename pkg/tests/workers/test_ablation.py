"""Ablation grid overrides and runs."""

import csv

import pytest

from grm.schemas.config import ScenarioPreset, apply_overrides
from grm.workers.ablation import ABLATION_COLUMNS, ABLATION_CSV_NAME, run_ablation, variant_config, variant_overrides
from tests.factories import tiny_run_config


class TestVariantOverrides:
    @pytest.mark.parametrize("variant,key,value", [
        ("#1", "model.policy", "two_stream"),
        ("#2", "model.policy", "one_stream"),
        ("#3", "model.scheme", "ts"),
        ("#4", "model.scheme", "tsa"),
        ("#b", "model.division_layers", [1, 2, 3, 4]),
        ("#c", "model.division_layers", [3, 4]),
        ("#d", "model.pooling", "avg"),
    ])
    def test_single_axis(self, variant, key, value):
        overrides = variant_overrides(variant, depth=4)
        assert overrides[key] == value

    @pytest.mark.parametrize("variant", ["#5", "#e"])
    def test_reference(self, variant):
        assert variant_overrides(variant, depth=4) == {
            "model.policy": "adaptive",
            "model.division_layers": None,
            "model.pooling": "max",
            "model.scheme": "sa",
        }

    def test_variant_config_resets_other_axes(self):
        cfg = tiny_run_config(pooling="avg")
        variant = variant_config(cfg, "#1", seed=9)
        assert variant.model.policy.value == "two_stream"
        assert variant.model.pooling.value == "max"
        assert variant.train.scenarios.preset == ScenarioPreset.DISTRACTOR
        assert variant.seed == 9


class TestRunAblation:
    def test_reference_row_and_csv(self, tmp_path):
        rows = run_ablation(tiny_run_config(epochs=1, pairs=1), out_dir=tmp_path)
        assert [r.variant for r in rows] == ["#5"]
        row = rows[0]
        assert row.policy == "adaptive" and row.division_layers == "2"
        assert 0.0 <= row.mean_IoU <= 1.0
        assert row.final_loss is not None
        with open(tmp_path / ABLATION_CSV_NAME, newline="") as f:
            records = list(csv.DictReader(f))
        assert list(records[0]) == ABLATION_COLUMNS
        assert records[0]["variant"] == "#5"
        assert (tmp_path / "5" / "metrics.json").is_file()

    def test_duplicate_reference_trains_once(self, tmp_path):
        cfg = apply_overrides(tiny_run_config(epochs=1, pairs=1), {"ablation.variants": ["#e", "#5"]})
        rows = run_ablation(cfg, out_dir=tmp_path)
        assert [r.variant for r in rows] == ["#e", "#5"]
        assert rows[0].model_dump(exclude={"variant"}) == rows[1].model_dump(exclude={"variant"})
        assert not (tmp_path / "e").exists()

    def test_two_stream_fractions(self):
        cfg = apply_overrides(tiny_run_config(epochs=0), {"ablation.variants": ["#1"]})
        row = run_ablation(cfg)[0]
        assert row.division_layers == "-"
        assert row.mean_ea_fraction == pytest.approx(0.5)
        assert row.final_loss is None

