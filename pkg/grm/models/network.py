"""
GRM network: patch embedding, division-aware encoder and prediction head

Parameter naming:
    embed.proj.W / embed.proj.b          shared patch projection (3P² -> C)
    embed.pos_z / embed.pos_x            template / search position embeddings
    encoder.layer{i}.ln1.gamma|beta      pre-attention layernorm
    encoder.layer{i}.attn.W_q|b_q|...    attention projections
    encoder.layer{i}.ln2.gamma|beta      pre-FFN layernorm
    encoder.layer{i}.ffn.W1|b1|W2|b2     feed-forward (C -> rC -> C)
    encoder.layer{i}.predictor.W1..b3    division MLP (adaptive layers only)
    head.{branch}.stage{j}.kernel|gamma|beta, head.{branch}.out.kernel|bias
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from grm.autograd.tensor import Tensor, op_scope
from grm.models import params as init
from grm.models.embedding import TokenBuffer, TokenOrigin, embed_tokens, patchify, tokens_to_map
from grm.models.head import (
    BRANCH_CHANNELS,
    BRANCHES,
    NUM_STAGES,
    BranchParams,
    ConvStage,
    HeadOutput,
    HeadParams,
    head_forward,
)
from grm.models.params import ParameterStore
from grm.models.relation import (
    SCHEME_COLUMNS,
    AttentionParams,
    Division,
    EncoderLayerParams,
    FFNParams,
    LayerNormParams,
    PredictorParams,
    encoder_stack,
)
from grm.schemas.config import GumbelConfig, LayerPolicy, ModelConfig

logger = logging.getLogger(__name__)

# sigmoid(-2.19) ≈ 0.1: center scores start near the background level
CENTER_PRIOR_BIAS = -2.19


@dataclass
class ForwardResult:
    head: HeadOutput
    divisions: List[Division]
    search_tokens: Tensor


class GRMNetwork:
    """
    Parameters and forward pass of one tracker model

    Usage:
        net = GRMNetwork.initialize(cfg.model, seed=0)
        result = net.forward(template_img, search_img, GumbelConfig(mode="eval"))
    """

    def __init__(self, cfg: ModelConfig, store: ParameterStore):
        self.cfg = cfg
        self.store = store
        self.layer_policies: List[LayerPolicy] = cfg.layer_policies()

    # ==================== Construction ====================

    @classmethod
    def initialize(cls, cfg: ModelConfig, seed: int) -> "GRMNetwork":
        """Build a freshly initialized network; identical seeds give identical weights"""
        rng = np.random.default_rng(seed)
        store = ParameterStore()
        c = cfg.patch.embed_dim
        std = cfg.init_std

        store.add("embed.proj.W", init.normal(rng, (cfg.patch.patch_dim, c), std))
        store.add("embed.proj.b", init.zeros((c,)))
        store.add("embed.pos_z", init.normal(rng, (cfg.patch.num_template_tokens, c), std))
        store.add("embed.pos_x", init.normal(rng, (cfg.patch.num_search_tokens, c), std))

        hidden = cfg.mlp_ratio * c
        predictor_layers = set(cfg.predictor_layers())
        num_categories = len(SCHEME_COLUMNS[cfg.scheme])
        for layer in range(1, cfg.depth + 1):
            prefix = f"encoder.layer{layer}"
            for ln in ("ln1", "ln2"):
                store.add(f"{prefix}.{ln}.gamma", init.ones((c,)))
                store.add(f"{prefix}.{ln}.beta", init.zeros((c,)))
            for proj in ("q", "k", "v", "o"):
                store.add(f"{prefix}.attn.W_{proj}", init.normal(rng, (c, c), std))
                store.add(f"{prefix}.attn.b_{proj}", init.zeros((c,)))
            store.add(f"{prefix}.ffn.W1", init.normal(rng, (c, hidden), std))
            store.add(f"{prefix}.ffn.b1", init.zeros((hidden,)))
            store.add(f"{prefix}.ffn.W2", init.normal(rng, (hidden, c), std))
            store.add(f"{prefix}.ffn.b2", init.zeros((c,)))
            if layer in predictor_layers:
                dims = [2 * c, c // 2, c // 4, num_categories]
                for j in range(3):
                    store.add(f"{prefix}.predictor.W{j + 1}", init.normal(rng, (dims[j], dims[j + 1]), std))
                    store.add(f"{prefix}.predictor.b{j + 1}", init.zeros((dims[j + 1],)))

        for branch in BRANCHES:
            channels = c
            for stage in range(1, NUM_STAGES + 1):
                out_channels = channels // 2
                name = f"head.{branch}.stage{stage}"
                store.add(f"{name}.kernel", init.he_normal(rng, (out_channels, channels, 3, 3)))
                store.add(f"{name}.gamma", init.ones((out_channels,)))
                store.add(f"{name}.beta", init.zeros((out_channels,)))
                channels = out_channels
            out = BRANCH_CHANNELS[branch]
            store.add(f"head.{branch}.out.kernel", init.normal(rng, (out, channels, 1, 1), std))
            bias = np.full((out,), CENTER_PRIOR_BIAS) if branch == "center" else init.zeros((out,))
            store.add(f"head.{branch}.out.bias", bias)

        logger.info(
            f"Initialized network: depth={cfg.depth}, C={c}, policy={cfg.policy.value}, "
            f"{store.num_parameters} parameters"
        )
        return cls(cfg, store)

    @classmethod
    def from_state(cls, cfg: ModelConfig, state: Mapping[str, np.ndarray]) -> "GRMNetwork":
        net = cls.initialize(cfg, seed=0)
        net.store.load_state_dict(state)
        return net

    # ==================== Parameter views ====================

    def layer_params(self, layer: int) -> EncoderLayerParams:
        p = f"encoder.layer{layer}"
        s = self.store
        predictor = None
        if f"{p}.predictor.W1" in s:
            predictor = PredictorParams(*(s[f"{p}.predictor.{n}{j}"] for j in (1, 2, 3) for n in ("W", "b")))
        return EncoderLayerParams(
            ln1=LayerNormParams(s[f"{p}.ln1.gamma"], s[f"{p}.ln1.beta"]),
            attn=AttentionParams(*(s[f"{p}.attn.{n}_{proj}"] for proj in "qkvo" for n in ("W", "b"))),
            ln2=LayerNormParams(s[f"{p}.ln2.gamma"], s[f"{p}.ln2.beta"]),
            ffn=FFNParams(s[f"{p}.ffn.W1"], s[f"{p}.ffn.b1"], s[f"{p}.ffn.W2"], s[f"{p}.ffn.b2"]),
            predictor=predictor,
        )

    def head_params(self) -> HeadParams:
        s = self.store
        branches: Dict[str, BranchParams] = {}
        for branch in BRANCHES:
            stages = [
                ConvStage(
                    s[f"head.{branch}.stage{j}.kernel"],
                    s[f"head.{branch}.stage{j}.gamma"],
                    s[f"head.{branch}.stage{j}.beta"],
                )
                for j in range(1, NUM_STAGES + 1)
            ]
            branches[branch] = BranchParams(stages, s[f"head.{branch}.out.kernel"], s[f"head.{branch}.out.bias"])
        return HeadParams(**branches)

    # ==================== Forward ====================

    def embed(self, image: Tensor, origin: TokenOrigin) -> TokenBuffer:
        patch = self.cfg.patch
        grid = patch.template_grid if origin == TokenOrigin.TEMPLATE else patch.search_grid
        pos = self.store["embed.pos_z" if origin == TokenOrigin.TEMPLATE else "embed.pos_x"]
        with op_scope(f"embed.{origin.value}"):
            return embed_tokens(
                patchify(image, patch.patch_size),
                self.store["embed.proj.W"],
                self.store["embed.proj.b"],
                pos,
                origin,
                (grid, grid),
            )

    def encode(
        self,
        template: TokenBuffer,
        search: TokenBuffer,
        gumbel: GumbelConfig,
        rng: Optional[np.random.Generator] = None,
        noise: Optional[Mapping[int, np.ndarray]] = None,
    ) -> Tuple[Tensor, Tensor, List[Division]]:
        layers = [self.layer_params(i) for i in range(1, self.cfg.depth + 1)]
        return encoder_stack(
            template.tokens,
            search.tokens,
            layers,
            gumbel,
            self.cfg.predictor_layers(),
            self.cfg.num_heads,
            policies=self.layer_policies,
            rng=rng,
            noise=noise,
            pooling=self.cfg.pooling,
            scheme=self.cfg.scheme,
            eps=self.cfg.layernorm_eps,
        )

    def predict(self, template: TokenBuffer, search_image: Tensor, gumbel: GumbelConfig,
                rng: Optional[np.random.Generator] = None,
                noise: Optional[Mapping[int, np.ndarray]] = None) -> ForwardResult:
        """Forward pass with an already embedded template"""
        search = self.embed(search_image, TokenOrigin.SEARCH)
        _, search_out, divisions = self.encode(template, search, gumbel, rng=rng, noise=noise)
        buffer = TokenBuffer(search_out, TokenOrigin.SEARCH, search.grid)
        with op_scope("head"):
            head = head_forward(tokens_to_map(buffer), self.head_params())
        return ForwardResult(head=head, divisions=divisions, search_tokens=search_out)

    def forward(self, template_image: Tensor, search_image: Tensor, gumbel: GumbelConfig,
                rng: Optional[np.random.Generator] = None,
                noise: Optional[Mapping[int, np.ndarray]] = None) -> ForwardResult:
        template = self.embed(template_image, TokenOrigin.TEMPLATE)
        return self.predict(template, search_image, gumbel, rng=rng, noise=noise)
