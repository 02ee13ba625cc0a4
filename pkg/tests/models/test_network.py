"""Network construction, parameter layout and forward pass."""

import numpy as np
import pytest

from grm.autograd.tensor import Tensor, no_grad
from grm.core.errors import ConfigError
from grm.models.network import GRMNetwork
from grm.schemas.config import GumbelConfig, GumbelMode, LayerPolicy, ModelConfig, PatchConfig, parse_run_config
from tests.factories import tiny_model_config

EVAL = GumbelConfig(mode=GumbelMode.EVAL)


def create_images(cfg, seed=0):
    rng = np.random.default_rng(seed)
    template = Tensor(rng.uniform(size=(3, cfg.patch.template_size, cfg.patch.template_size)))
    search = Tensor(rng.uniform(size=(3, cfg.patch.search_size, cfg.patch.search_size)))
    return template, search


class TestInitialization:
    def test_same_seed_same_weights(self):
        first = GRMNetwork.initialize(tiny_model_config(), 5).store.state_dict()
        second = GRMNetwork.initialize(tiny_model_config(), 5).store.state_dict()
        assert first.keys() == second.keys()
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_different_seed_different_weights(self):
        first = GRMNetwork.initialize(tiny_model_config(), 0).store
        second = GRMNetwork.initialize(tiny_model_config(), 1).store
        assert not np.array_equal(first["embed.proj.W"].data, second["embed.proj.W"].data)

    def test_predictors_on_default_layers(self):
        """Default division layers are 2..L; layer 1 has no predictor."""
        names = GRMNetwork.initialize(tiny_model_config(depth=3), 0).store.names()
        assert not any(n.startswith("encoder.layer1.predictor") for n in names)
        assert "encoder.layer2.predictor.W1" in names
        assert "encoder.layer3.predictor.W3" in names

    @pytest.mark.parametrize("policy", ["one_stream", "two_stream"])
    def test_forced_policies_have_no_predictor(self, policy):
        names = GRMNetwork.initialize(tiny_model_config(policy=policy), 0).store.names()
        assert not any(".predictor." in n for n in names)

    def test_predictor_width_follows_scheme(self):
        store = GRMNetwork.initialize(tiny_model_config(scheme="tsa"), 0).store
        assert store["encoder.layer2.predictor.W3"].shape == (4, 3)

    def test_from_state(self):
        net = GRMNetwork.initialize(tiny_model_config(), 3)
        copy = GRMNetwork.from_state(net.cfg, net.store.state_dict())
        np.testing.assert_array_equal(copy.store["head.size.out.kernel"].data, net.store["head.size.out.kernel"].data)


class TestModelConfig:
    def test_layer_policies(self):
        assert tiny_model_config(depth=3).layer_policies() == [
            LayerPolicy.FORCE_ALL_A, LayerPolicy.ADAPTIVE, LayerPolicy.ADAPTIVE,
        ]
        assert tiny_model_config(depth=3, policy="two_stream").layer_policies() == [
            LayerPolicy.FORCE_ALL_S, LayerPolicy.FORCE_ALL_S, LayerPolicy.FORCE_ALL_A,
        ]

    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError):
            tiny_model_config(num_heads=3)

    def test_division_layers_in_range(self):
        with pytest.raises(ValueError):
            tiny_model_config(division_layers=[0, 2])

    def test_patch_must_divide_crops(self):
        with pytest.raises(ValueError):
            PatchConfig(patch_size=5, embed_dim=16, template_size=16, search_size=32)

    def test_config_error_names_key_path(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_run_config({"model": {"patch": {"patch_size": 0}}})
        assert excinfo.value.key_path == "model.patch.patch_size"
        assert excinfo.value.exit_code == 2

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as excinfo:
            parse_run_config({"model": {"dept": 3}})
        assert excinfo.value.key_path == "model.dept"

    def test_default_width_is_valid(self):
        assert ModelConfig().patch.embed_dim % 16 == 0


class TestForward:
    def test_shapes(self):
        cfg = tiny_model_config()
        net = GRMNetwork.initialize(cfg, 0)
        template, search = create_images(cfg)
        with no_grad():
            result = net.forward(template, search, EVAL)
        assert result.head.grid == (4, 4)
        assert result.search_tokens.shape == (16, 16)
        assert len(result.divisions) == 2
        assert result.divisions[0].ea_fraction() == 1.0

    def test_two_stream_divisions(self):
        cfg = tiny_model_config(depth=3, policy="two_stream")
        net = GRMNetwork.initialize(cfg, 0)
        template, search = create_images(cfg)
        with no_grad():
            result = net.forward(template, search, EVAL)
        assert [d.ea_fraction() for d in result.divisions] == [0.0, 0.0, 1.0]

    def test_eval_mode_is_deterministic(self):
        cfg = tiny_model_config()
        net = GRMNetwork.initialize(cfg, 0)
        template, search = create_images(cfg)
        with no_grad():
            first = net.forward(template, search, EVAL)
            second = net.forward(template, search, EVAL)
        np.testing.assert_array_equal(first.head.center_scores.data, second.head.center_scores.data)

    def test_frozen_noise_per_layer(self):
        cfg = tiny_model_config()
        net = GRMNetwork.initialize(cfg, 0)
        template, search = create_images(cfg)
        noise = {2: np.where(np.arange(32).reshape(16, 2) % 2 == 0, 1e3, -1e3)}
        with no_grad():
            result = net.forward(template, search, GumbelConfig(), noise=noise)
        assert result.divisions[1].ea_fraction() == 0.0
