"""Parameter storage and the AdamW optimizer."""

import numpy as np
import pytest

from grm.autograd import ops
from grm.autograd.tensor import Tape, using_tape
from grm.core.errors import ShapeError, UsageError
from grm.models.optim import AdamW, step_decay_lr
from grm.models.params import ParameterStore, he_normal
from grm.schemas.config import OptimizerConfig


def create_store():
    store = ParameterStore()
    store.add("encoder.layer1.W", np.ones((2, 3)))
    store.add("encoder.layer1.b", np.zeros(3))
    store.add("head.out.bias", np.full(1, -2.0))
    return store


class TestParameterStore:
    def test_registration(self):
        store = create_store()
        assert store.names() == ["encoder.layer1.W", "encoder.layer1.b", "head.out.bias"]
        assert store.num_parameters == 10
        assert store["encoder.layer1.W"].requires_grad
        assert store["encoder.layer1.W"].name == "encoder.layer1.W"

    def test_duplicate_and_unknown(self):
        store = create_store()
        with pytest.raises(UsageError):
            store.add("head.out.bias", np.zeros(1))
        with pytest.raises(UsageError):
            store["head.missing"]

    def test_group(self):
        assert list(create_store().group("encoder")) == ["encoder.layer1.W", "encoder.layer1.b"]

    def test_state_dict_is_a_copy(self):
        store = create_store()
        state = store.state_dict()
        state["encoder.layer1.W"][0, 0] = 7.0
        assert store["encoder.layer1.W"].data[0, 0] == 1.0

    def test_load_state_dict(self):
        store = create_store()
        state = store.state_dict()
        state["encoder.layer1.b"] = np.array([1.0, 2.0, 3.0])
        tensor = store["encoder.layer1.b"]
        store.load_state_dict(state)
        assert store["encoder.layer1.b"] is tensor
        np.testing.assert_array_equal(tensor.data, [1.0, 2.0, 3.0])

    def test_load_state_dict_errors(self):
        store = create_store()
        state = store.state_dict()
        del state["head.out.bias"]
        with pytest.raises(UsageError):
            store.load_state_dict(state)
        state = store.state_dict()
        state["encoder.layer1.b"] = np.zeros(4)
        with pytest.raises(ShapeError):
            store.load_state_dict(state)

    def test_he_normal_scale(self):
        values = he_normal(np.random.default_rng(0), (64, 32, 3, 3))
        assert values.std() == pytest.approx(np.sqrt(2.0 / (32 * 9)), rel=0.05)


class TestAdamW:
    def test_step_decay_lr(self):
        assert step_decay_lr(1e-3, 3, 4, 0.1) == 1e-3
        assert step_decay_lr(1e-3, 4, 4, 0.1) == pytest.approx(1e-4)

    def test_first_step_moves_by_lr(self):
        """Bias-corrected first step: every entry moves by lr against its gradient sign."""
        store = create_store()
        bias = store["encoder.layer1.b"]
        bias.grad = np.array([0.3, -2.0, 1e-3])
        optimizer = AdamW({"encoder.layer1.b": bias}, lr=0.01, cfg=OptimizerConfig(grad_clip_norm=None))
        optimizer.step()
        np.testing.assert_allclose(bias.data, [-0.01, 0.01, -0.01], rtol=1e-4)

    def test_weight_decay_only_on_matrices(self):
        store = create_store()
        for tensor in (store["encoder.layer1.W"], store["encoder.layer1.b"], store["head.out.bias"]):
            tensor.grad = np.zeros(tensor.shape)
        optimizer = AdamW(dict(store.items()), lr=0.1, cfg=OptimizerConfig(weight_decay=0.5, grad_clip_norm=None))
        optimizer.step()
        np.testing.assert_allclose(store["encoder.layer1.W"].data, 1.0 - 0.1 * 0.5)
        np.testing.assert_array_equal(store["head.out.bias"].data, [-2.0])

    def test_clipping_reports_raw_norm(self):
        store = create_store()
        bias = store["encoder.layer1.b"]
        bias.grad = np.array([3.0, 4.0, 0.0])
        optimizer = AdamW({"b": bias}, lr=0.01, cfg=OptimizerConfig(grad_clip_norm=1.0))
        assert optimizer.step() == pytest.approx(5.0)

    def test_minimizes_quadratic(self):
        store = ParameterStore()
        x = store.add("x", np.array([3.0, -2.0]))
        optimizer = AdamW(dict(store.items()), lr=0.1, cfg=OptimizerConfig(weight_decay=0.0))
        for _ in range(300):
            optimizer.zero_grad()
            with using_tape(Tape()):
                ops.tensor_sum(x * x).backward()
            optimizer.step()
        assert np.all(np.abs(x.data) < 0.05)
