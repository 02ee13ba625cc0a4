"""Template/search cropping against pixel-exact oracles."""

import numpy as np
import pytest

from grm.core.errors import ShapeError, UsageError
from grm.schemas.config import CropConfig
from grm.schemas.geometry import BBox
from grm.services.cropping import CropRecord, crop_region, crop_search, crop_side, crop_template


def create_frame(height=20, width=24, seed=0):
    return np.random.default_rng(seed).uniform(size=(3, height, width))


class TestCropRegion:
    def test_unit_scale_is_a_pixel_copy(self):
        """side == out_size on integer pixel edges samples pixel centers exactly."""
        image = create_frame()
        crop = crop_region(image, center=(3 + 4, 2 + 4), side=8, out_size=8)
        np.testing.assert_allclose(crop, image[:, 2:10, 3:11], rtol=0, atol=1e-12)

    def test_half_scale_averages_two_by_two(self):
        image = create_frame()
        crop = crop_region(image, center=(4 + 4, 6 + 4), side=8, out_size=4)
        blocks = image[:, 6:14, 4:12].reshape(3, 4, 2, 4, 2).mean(axis=(2, 4))
        np.testing.assert_allclose(crop, blocks, rtol=0, atol=1e-12)

    def test_border_replication(self):
        """Samples left of the frame repeat the first column."""
        image = create_frame()
        crop = crop_region(image, center=(0.0, 10.0), side=8, out_size=8)
        np.testing.assert_allclose(crop[:, :, :4], np.repeat(image[:, 6:14, :1], 4, axis=2), atol=1e-12)

    def test_constant_image(self):
        image = np.full((3, 10, 10), 0.3)
        crop = crop_region(image, center=(2.7, 8.1), side=13.3, out_size=5)
        np.testing.assert_allclose(crop, 0.3, atol=1e-15)

    def test_bright_square_pixel_count(self):
        """A 4×4 bright square copied at unit scale keeps its 16 pixels."""
        image = np.zeros((3, 16, 16))
        image[:, 6:10, 5:9] = 1.0
        crop = crop_region(image, center=(8.0, 8.0), side=12, out_size=12)
        assert int(np.sum(crop[0] > 0.5)) == 16

    def test_degenerate_side(self):
        with pytest.raises(UsageError):
            crop_region(create_frame(), (5.0, 5.0), 0.0, 4)

    def test_needs_channel_axis(self):
        with pytest.raises(ShapeError):
            crop_region(np.zeros((10, 10)), (5.0, 5.0), 4.0, 4)


class TestCropRecord:
    def test_round_trip(self):
        record = CropRecord(center_x=40.0, center_y=30.0, side=48.0, frame_width=128, frame_height=96)
        box = BBox(cx=0.3, cy=0.35, w=0.1, h=0.15)
        back = record.to_frame(record.to_crop(box))
        assert back.as_array() == pytest.approx(box.as_array(), abs=1e-9)

    def test_crop_center_maps_to_record_center(self):
        record = CropRecord(center_x=40.0, center_y=30.0, side=48.0, frame_width=128, frame_height=96)
        frame_box = record.to_frame(BBox(cx=0.5, cy=0.5, w=0.2, h=0.2))
        assert frame_box.cx == pytest.approx(40.0 / 128)
        assert frame_box.cy == pytest.approx(30.0 / 96)
        assert frame_box.w == pytest.approx(0.2 * 48 / 128)

    def test_box_outside_frame_is_clipped(self):
        record = CropRecord(center_x=2.0, center_y=2.0, side=40.0, frame_width=64, frame_height=64)
        box = record.to_frame(BBox(cx=0.1, cy=0.1, w=0.2, h=0.2))
        x0, y0, _, _ = box.corners()
        assert x0 >= 0.0 and y0 >= 0.0


class TestCrops:
    def test_side_rule(self):
        box = BBox(cx=0.5, cy=0.5, w=0.25, h=0.1)
        assert crop_side(box, (64, 40), 2.0) == pytest.approx(2.0 * np.sqrt(16 * 4))

    def test_template_and_search_sizes(self):
        image = create_frame(64, 64)
        box = BBox(cx=0.5, cy=0.5, w=0.2, h=0.15)
        template = crop_template(image, box, CropConfig(), 16)
        search, record = crop_search(image, box, CropConfig(), 32)
        assert template.shape == (3, 16, 16)
        assert search.shape == (3, 32, 32)
        assert record.side == pytest.approx(2.0 * crop_side(box, (64, 64), 2.0))

    def test_search_jitter(self):
        image = create_frame(64, 64)
        box = BBox(cx=0.5, cy=0.5, w=0.2, h=0.2)
        _, plain = crop_search(image, box, CropConfig(), 32)
        _, jittered = crop_search(image, box, CropConfig(), 32, shift=(3.0, -2.0), scale=1.5)
        assert (jittered.center_x, jittered.center_y) == (plain.center_x + 3.0, plain.center_y - 2.0)
        assert jittered.side == pytest.approx(1.5 * plain.side)

    def test_target_lands_in_search_center(self):
        image = create_frame(64, 64)
        box = BBox(cx=0.4, cy=0.6, w=0.2, h=0.2)
        _, record = crop_search(image, box, CropConfig(), 32)
        in_crop = record.to_crop(box)
        assert (in_crop.cx, in_crop.cy) == pytest.approx((0.5, 0.5))
        assert in_crop.w == pytest.approx(0.25)
