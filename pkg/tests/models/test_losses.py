"""Training targets and loss terms against closed forms."""

import numpy as np
import pytest

from grm.autograd.gradcheck import finite_diff_check
from grm.autograd.tensor import Tensor, no_grad
from grm.core.errors import UsageError
from grm.models.head import HeadOutput
from grm.models.losses import (
    compute_losses,
    focal_loss,
    gaussian_target,
    giou_loss,
    l1_loss,
    peak_cell,
    total_loss,
    training_heatmap,
)
from grm.schemas.config import LossConfig, LossWeights, RegressionAnchor
from grm.schemas.geometry import BBox

GT = BBox(cx=0.4, cy=0.6, w=0.3, h=0.2)
GRID = (4, 4)


def create_perfect_output(gt=GT, grid=GRID):
    """Head output whose score map is one-hot at the gt cell and whose box there is exact."""
    h, w = grid
    row, col = peak_cell((gt.cx, gt.cy), grid)
    scores = np.zeros((1, h, w))
    scores[0, row, col] = 1.0
    offsets = np.zeros((2, h, w))
    offsets[:, row, col] = [gt.cx * w - col, gt.cy * h - row]
    sizes = np.full((2, h, w), 0.5)
    sizes[:, row, col] = [gt.w, gt.h]
    return HeadOutput(Tensor(scores), Tensor(offsets), Tensor(sizes))


class TestGaussianTarget:
    def test_peak_on_cell_center(self):
        heat = gaussian_target((1.5 / 4, 2.5 / 4), GRID, sigma_cells=1.0).data
        assert heat[0, 2, 1] == 1.0
        assert np.all(heat <= 1.0)
        assert heat[0, 2, 0] == pytest.approx(np.exp(-0.5))

    def test_training_heatmap_has_one_peak(self):
        heat = training_heatmap(GT, GRID, LossConfig()).data
        assert np.sum(heat == 1.0) == 1
        assert heat[(0,) + peak_cell((GT.cx, GT.cy), GRID)] == 1.0

    @pytest.mark.parametrize("center,sigma", [((1.2, 0.5), 1.0), ((0.5, 0.5), 0.0)])
    def test_invalid(self, center, sigma):
        with pytest.raises(UsageError):
            gaussian_target(center, GRID, sigma)

    def test_peak_cell_clips_right_edge(self):
        assert peak_cell((1.0, 1.0), GRID) == (3, 3)


class TestFocalLoss:
    def test_closed_form(self):
        scores = np.array([[[0.6, 0.2], [0.1, 0.3]]])
        target = np.array([[[1.0, 0.5], [0.0, 0.25]]])
        expected = -(
            (1 - 0.6) ** 2 * np.log(0.6)
            + (1 - 0.5) ** 4 * 0.2 ** 2 * np.log(0.8)
            + 1.0 * 0.1 ** 2 * np.log(0.9)
            + (1 - 0.25) ** 4 * 0.3 ** 2 * np.log(0.7)
        )
        assert focal_loss(Tensor(scores), target).item() == pytest.approx(expected, rel=1e-12)

    def test_normalized_by_positive_count(self):
        """p = 0.5 everywhere: each cell contributes 0.25·ln2, divided by the number of peaks."""
        scores = Tensor(np.full((1, 2, 2), 0.5))
        one = np.zeros((1, 2, 2))
        one[0, 0, 0] = 1.0
        two = one.copy()
        two[0, 1, 1] = 1.0
        assert focal_loss(scores, one).item() == pytest.approx(np.log(2.0), rel=1e-12)
        assert focal_loss(scores, two).item() == pytest.approx(0.5 * np.log(2.0), rel=1e-12)

    def test_perfect_scores(self):
        target = np.zeros((1, 3, 3))
        target[0, 1, 1] = 1.0
        assert focal_loss(Tensor(target), target).item() == pytest.approx(0.0, abs=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            focal_loss(Tensor(np.full((1, 2, 2), 0.5)), np.zeros((1, 3, 3)))

    def test_gradient(self):
        scores = Tensor(np.random.default_rng(0).uniform(0.05, 0.95, size=(1, 3, 3)), requires_grad=True)
        target = gaussian_target((0.5, 0.5), (3, 3), 1.0)
        report = finite_diff_check(lambda: focal_loss(scores, target), {"scores": scores})
        assert report.max_error < 1e-5


class TestBoxLosses:
    def test_identical_boxes(self):
        assert giou_loss(GT, GT).item() == pytest.approx(0.0, abs=1e-12)
        assert l1_loss(GT, GT).item() == 0.0

    def test_partial_overlap(self):
        """IoU 0.6 and a hull equal to the union: GIoU = IoU."""
        pred = BBox(cx=0.5, cy=0.5, w=0.4, h=0.4)
        gt = BBox(cx=0.6, cy=0.5, w=0.4, h=0.4)
        assert giou_loss(pred, gt).item() == pytest.approx(0.4, abs=1e-12)
        assert pred.iou(gt) == pytest.approx(0.6, abs=1e-12)

    def test_disjoint_boxes(self):
        """IoU 0; the hull penalty pushes the loss above 1."""
        pred = BBox(cx=0.25, cy=0.25, w=0.2, h=0.2)
        gt = BBox(cx=0.75, cy=0.75, w=0.2, h=0.2)
        assert giou_loss(pred, gt).item() == pytest.approx(1.0 + (0.49 - 0.08) / 0.49, abs=1e-12)

    def test_l1_closed_form(self):
        pred = BBox(cx=0.5, cy=0.5, w=0.2, h=0.4)
        gt = BBox(cx=0.6, cy=0.3, w=0.2, h=0.1)
        assert l1_loss(pred, gt).item() == pytest.approx((0.1 + 0.2 + 0.0 + 0.3) / 4, abs=1e-12)

    def test_zero_area_gt(self):
        with pytest.raises(UsageError):
            giou_loss(GT, Tensor([0.5, 0.5, 0.0, 0.2]))

    def test_box_tensor_shape(self):
        with pytest.raises(UsageError):
            l1_loss(Tensor([0.5, 0.5, 0.1]), GT)

    def test_giou_gradient(self):
        pred = Tensor([0.45, 0.57, 0.25, 0.3], requires_grad=True)
        report = finite_diff_check(lambda: giou_loss(pred, GT) + l1_loss(pred, GT), {"pred": pred})
        assert report.max_error < 1e-5


class TestTotalLoss:
    def test_perfect_prediction_is_zero(self):
        terms = compute_losses(create_perfect_output(), GT)
        assert terms.total.item() == pytest.approx(0.0, abs=1e-6)
        assert terms.anchor_cell == (2, 1)

    def test_weighted_sum(self):
        out = create_perfect_output()
        gt = BBox(cx=0.45, cy=0.55, w=0.25, h=0.3)
        terms = compute_losses(out, gt).as_floats()
        assert terms["total"] == pytest.approx(terms["focal"] + 2.0 * terms["giou"] + 5.0 * terms["l1"], rel=1e-12)

    def test_custom_weights(self):
        out = create_perfect_output()
        gt = BBox(cx=0.45, cy=0.55, w=0.25, h=0.3)
        weights = LossWeights(lambda_center=0.0, lambda_giou=1.0, lambda_l1=0.0)
        assert total_loss(out, gt, weights).item() == pytest.approx(compute_losses(out, gt).giou.item(), rel=1e-12)

    def test_pred_anchor_reads_argmax_cell(self):
        out = create_perfect_output()
        out.center_scores.data[0, 0, 3] = 5.0
        terms = compute_losses(out, GT, LossConfig(anchor=RegressionAnchor.PRED))
        assert terms.anchor_cell == (0, 3)
        assert terms.l1.item() > 0.0

    def test_all_weights_zero_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(lambda_center=0.0, lambda_giou=0.0, lambda_l1=0.0)

    def test_regression_terms_reach_offsets_and_sizes(self):
        out = create_perfect_output()
        offsets = Tensor(out.offsets.data, requires_grad=True)
        sizes = Tensor(out.sizes.data, requires_grad=True)
        out = HeadOutput(out.center_scores, offsets, sizes)
        gt = BBox(cx=0.45, cy=0.55, w=0.25, h=0.3)
        compute_losses(out, gt).total.backward()
        row, col = 2, 1
        assert np.any(offsets.grad[:, row, col] != 0.0)
        mask = np.ones(offsets.shape, dtype=bool)
        mask[:, row, col] = False
        assert np.all(offsets.grad[mask] == 0.0)
        assert np.any(sizes.grad[:, row, col] != 0.0)

    def test_no_grad(self):
        with no_grad():
            terms = compute_losses(create_perfect_output(), GT)
        assert not terms.total.requires_grad
