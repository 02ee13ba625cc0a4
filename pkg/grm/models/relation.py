"""
Tri-category relation modeling

Tokens fall into three categories:

    E_T  template tokens (always; search tokens only under the `ts`/`tsa` schemes)
    E_S  search tokens that must not interact with the template
    E_A  search tokens that attend to, and are attended by, everything

The attention rules are a 3×3 relation matrix R over (E_T, E_S, E_A):

    E_T -> {E_T, E_A}
    E_S -> {E_S, E_A}
    E_A -> {E_T, E_S, E_A}

With D̂ the (N_z+N_x)×3 one-hot category matrix, the fused attention mask is
M = D̂·R·D̂ᵀ; one masked attention call then computes what three separate
attention calls over the category subsets would. Layers without adaptive
division use a constant division (all E_S or all E_A), which degenerates the
layer to the two-stream or one-stream form.

Division modes (GumbelConfig.mode):
    train    forward uses the hard Gumbel-max sample, backward the soft relaxation
    eval     argmax of pi, no noise
    relaxed  soft relaxation in both passes (finite-difference checkable)

Argmax ties resolve to the last category column (E_A under the default scheme).
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from grm.autograd import ops
from grm.autograd.tensor import Tensor, op_scope
from grm.core.errors import ConfigError, InvariantViolationError, ShapeError
from grm.schemas.config import DivisionScheme, GumbelConfig, GumbelMode, LayerPolicy, Pooling
from grm.schemas.reports import DivisionRecord

logger = logging.getLogger(__name__)

CAT_T, CAT_S, CAT_A = 0, 1, 2

RELATION_RULES = np.array(
    [
        [1, 0, 1],
        [0, 1, 1],
        [1, 1, 1],
    ],
    dtype=np.float64,
)

# D̂ column of each division column, per scheme
SCHEME_COLUMNS: Dict[DivisionScheme, Tuple[int, ...]] = {
    DivisionScheme.SA: (CAT_S, CAT_A),
    DivisionScheme.TS: (CAT_T, CAT_S),
    DivisionScheme.TSA: (CAT_T, CAT_S, CAT_A),
}

CATEGORY_NAMES = ("E_T", "E_S", "E_A")

PI_FLOOR = 1e-12
SIMPLEX_TOL = 1e-6


class LayerForm(str, Enum):
    TWO_STREAM = "two_stream"
    INTERMEDIATE = "intermediate"
    ONE_STREAM = "one_stream"


# ==================== Parameters / State ====================

@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor


@dataclass
class AttentionParams:
    """
    Q/K/V/output projections; head h uses columns h·d:(h+1)·d of W_q, W_k,
    W_v (d = C / num_heads), which is the per-head projection set
    concatenated along the output axis
    """
    W_q: Tensor
    b_q: Tensor
    W_k: Tensor
    b_k: Tensor
    W_v: Tensor
    b_v: Tensor
    W_o: Tensor
    b_o: Tensor


@dataclass
class FFNParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor


@dataclass
class PredictorParams:
    """Division MLP 2C -> C/2 -> C/4 -> K"""
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    W3: Tensor
    b3: Tensor


@dataclass
class EncoderLayerParams:
    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    ffn: FFNParams
    predictor: Optional[PredictorParams] = None

    @property
    def dim(self) -> int:
        return self.attn.W_q.shape[0]


@dataclass
class LayerState:
    """Template and search token buffers between encoder layers"""
    template: Tensor
    search: Tensor

    @property
    def num_template(self) -> int:
        return self.template.shape[0]

    @property
    def num_search(self) -> int:
        return self.search.shape[0]

    def joined(self) -> Tensor:
        return ops.concat([self.template, self.search], axis=0)

    @classmethod
    def split(cls, tokens: Tensor, num_template: int) -> "LayerState":
        return cls(template=tokens[:num_template], search=tokens[num_template:])


# ==================== Division ====================

@dataclass
class Division:
    """
    Search-token division of one layer

    Attributes:
        pi: N_x×K category probabilities
        D: N_x×K binary one-hot assignment
        soft: N_x×K Gumbel-Softmax relaxation (None in eval mode and for
            forced divisions)
        assignment: The tensor the attention mask is built from; equals D in
            value for train/eval (straight-through in train mode) and soft in
            relaxed mode
        scheme: Which categories the columns stand for
    """
    pi: Tensor
    D: np.ndarray
    soft: Optional[Tensor]
    assignment: Tensor
    scheme: DivisionScheme = DivisionScheme.SA

    @property
    def categories(self) -> List[str]:
        return [CATEGORY_NAMES[c] for c in SCHEME_COLUMNS[self.scheme]]

    def category_columns(self) -> np.ndarray:
        """D̂ category index of every search token"""
        columns = np.array(SCHEME_COLUMNS[self.scheme])
        return columns[np.argmax(self.D, axis=1)]

    def ea_fraction(self) -> float:
        return float(np.mean(self.category_columns() == CAT_A))

    def to_record(self, layer: int) -> DivisionRecord:
        fraction = self.ea_fraction()
        return DivisionRecord(
            layer=layer,
            pi=self.pi.data.tolist(),
            D=[int(i) for i in np.argmax(self.D, axis=1)],
            categories=self.categories,
            form=classify_layer_form(fraction).value,
        )


def classify_layer_form(ea_fraction: float, tolerance: float = 0.02) -> LayerForm:
    """Name the pipeline form a layer's division amounts to"""
    if ea_fraction <= tolerance:
        return LayerForm.TWO_STREAM
    if ea_fraction >= 1.0 - tolerance:
        return LayerForm.ONE_STREAM
    return LayerForm.INTERMEDIATE


def _one_hot_last_max(scores: np.ndarray) -> np.ndarray:
    """Row-wise one-hot of the argmax; ties go to the last column"""
    k = scores.shape[1]
    index = k - 1 - np.argmax(scores[:, ::-1], axis=1)
    hard = np.zeros(scores.shape)
    hard[np.arange(scores.shape[0]), index] = 1.0
    return hard


def _check_simplex(pi: np.ndarray) -> None:
    if pi.ndim != 2:
        raise ShapeError(f"pi must be N_x×K, got {pi.shape}")
    if np.any(pi < 0) or np.any(np.abs(pi.sum(axis=1) - 1.0) > SIMPLEX_TOL):
        raise InvariantViolationError("pi rows must be nonnegative and sum to 1")


def gumbel_divide(
    pi: Tensor,
    cfg: GumbelConfig,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    scheme: DivisionScheme = DivisionScheme.SA,
) -> Division:
    """
    Sample a hard division from pi with the Gumbel-max trick

    Args:
        pi: N_x×K probabilities (rows on the simplex)
        cfg: Temperature and mode
        rng: Noise source; defaults to a generator seeded with cfg.rng_seed
        noise: Explicit Gumbel noise of pi's shape (frozen noise); overrides rng
        scheme: Category meaning of the columns

    Returns:
        Division with D = one-hot(argmax(log pi + g)) and
        soft = softmax((log pi + g) / tau) over the categories of each token

    Raises:
        ConfigError: tau <= 0
    """
    if cfg.tau <= 0:
        raise ConfigError(f"temperature must be positive, got {cfg.tau}", key_path="gumbel.tau")
    _check_simplex(pi.data)
    if pi.shape[1] != len(SCHEME_COLUMNS[scheme]):
        raise ShapeError(f"pi has {pi.shape[1]} columns, scheme {scheme.value} needs {len(SCHEME_COLUMNS[scheme])}")

    if cfg.mode == GumbelMode.EVAL:
        hard = _one_hot_last_max(pi.data)
        return Division(pi=pi, D=hard, soft=None, assignment=Tensor(hard), scheme=scheme)

    if noise is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.rng_seed)
        noise = rng.gumbel(0.0, 1.0, size=pi.shape)
    elif noise.shape != pi.shape:
        raise ShapeError(f"noise {noise.shape} does not match pi {pi.shape}")

    scores = ops.log(ops.clamp(pi, PI_FLOOR, 1.0)) + noise
    soft = ops.softmax(scores * (1.0 / cfg.tau))
    hard = _one_hot_last_max(scores.data)
    if cfg.mode == GumbelMode.RELAXED:
        assignment = soft
    else:
        assignment = ops.straight_through(soft, hard)
    return Division(pi=pi, D=hard, soft=soft, assignment=assignment, scheme=scheme)


def forced_division(policy: LayerPolicy, num_search: int) -> Division:
    """Constant all-E_S or all-E_A division (pi one-hot)"""
    if policy == LayerPolicy.ADAPTIVE:
        raise ConfigError("adaptive layers sample their division", key_path="policy")
    column = 0 if policy == LayerPolicy.FORCE_ALL_S else 1
    hard = np.zeros((num_search, 2))
    hard[:, column] = 1.0
    return Division(pi=Tensor(hard), D=hard, soft=None, assignment=Tensor(hard), scheme=DivisionScheme.SA)


def predict_division(
    E_z: Tensor,
    E_x: Tensor,
    params: Optional[PredictorParams],
    pooling: Pooling = Pooling.MAX,
) -> Tensor:
    """
    pi = softmax(MLP([pool(E_z); E_x])) row by row

    Args:
        E_z: N_z×C template tokens
        E_x: N_x×C search tokens
        params: Predictor MLP of this layer
        pooling: Template aggregation (max or average over tokens)

    Returns:
        N_x×K probabilities

    Raises:
        ConfigError: the layer has no predictor
    """
    if params is None:
        raise ConfigError("layer has no division predictor", key_path="model.division_layers")
    pooled = ops.global_maxpool(E_z) if pooling == Pooling.MAX else ops.global_avgpool(E_z)
    target = ops.matmul(Tensor(np.ones((E_x.shape[0], 1))), ops.reshape(pooled, (1, -1)))
    features = ops.concat([target, E_x], axis=1)
    hidden = ops.gelu(ops.linear(features, params.W1, params.b1))
    hidden = ops.gelu(ops.linear(hidden, params.W2, params.b2))
    return ops.softmax(ops.linear(hidden, params.W3, params.b3))


# ==================== Mask ====================

@dataclass
class AttentionMask:
    """Binary (N_z+N_x)² matrix; M[i, j] = 1 iff token i may attend to token j"""
    M: np.ndarray
    num_template: int

    def __post_init__(self) -> None:
        if self.M.ndim != 2 or self.M.shape[0] != self.M.shape[1]:
            raise ShapeError(f"attention mask must be square, got {self.M.shape}")
        if not np.all(self.M.any(axis=1)):
            raise InvariantViolationError("attention mask has a row without any allowed key")

    def as_tensor(self) -> Tensor:
        return Tensor(self.M)


def _placement(scheme: DivisionScheme) -> np.ndarray:
    """K×3 matrix moving division columns to their D̂ columns"""
    columns = SCHEME_COLUMNS[scheme]
    place = np.zeros((len(columns), 3))
    place[np.arange(len(columns)), columns] = 1.0
    return place


def _template_rows(num_template: int) -> np.ndarray:
    rows = np.zeros((num_template, 3))
    rows[:, CAT_T] = 1.0
    return rows


def build_mask(D: np.ndarray, num_template: int, scheme: DivisionScheme = DivisionScheme.SA) -> AttentionMask:
    """
    Fused mask M = D̂·R·D̂ᵀ for a hard division

    Raises:
        InvariantViolationError: D rows are not one-hot
    """
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] != len(SCHEME_COLUMNS[scheme]):
        raise ShapeError(f"division {D.shape} does not fit scheme {scheme.value}")
    if not np.all((D == 0) | (D == 1)) or not np.all(D.sum(axis=1) == 1):
        raise InvariantViolationError("division rows must be one-hot")
    d_hat = np.concatenate([_template_rows(num_template), D @ _placement(scheme)], axis=0)
    return AttentionMask(M=d_hat @ RELATION_RULES @ d_hat.T, num_template=num_template)


def division_mask(division: Division, num_template: int) -> Tensor:
    """
    Mask tensor built from the division's assignment

    Same values as build_mask(division.D) for hard divisions, but
    differentiable w.r.t. the assignment so the predictor gets gradient.
    """
    if division.soft is None:
        return build_mask(division.D, num_template, division.scheme).as_tensor()
    placed = ops.matmul(division.assignment, Tensor(_placement(division.scheme)))
    d_hat = ops.concat([Tensor(_template_rows(num_template)), placed], axis=0)
    return ops.matmul(ops.matmul(d_hat, Tensor(RELATION_RULES)), ops.transpose(d_hat, (1, 0)))


# ==================== Attention ====================

MaskLike = Union[AttentionMask, Tensor, np.ndarray, None]


def _split_heads(x: Tensor, num_heads: int) -> Tensor:
    n, c = x.shape
    return ops.transpose(ops.reshape(x, (n, num_heads, c // num_heads)), (1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    heads, n, d = x.shape
    return ops.reshape(ops.transpose(x, (1, 0, 2)), (n, heads * d))


def _attend(queries: Tensor, keys: Tensor, params: AttentionParams, num_heads: int, mask: MaskLike) -> Tensor:
    dim = params.W_q.shape[0]
    if dim % num_heads:
        raise ShapeError(f"num_heads {num_heads} does not divide width {dim}")
    q = _split_heads(ops.linear(queries, params.W_q, params.b_q), num_heads)
    k = _split_heads(ops.linear(keys, params.W_k, params.b_k), num_heads)
    v = _split_heads(ops.linear(keys, params.W_v, params.b_v), num_heads)
    scores = ops.matmul(q, ops.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(dim // num_heads))
    if isinstance(mask, AttentionMask):
        mask = mask.as_tensor()
    weights = ops.masked_softmax(scores, mask)
    return ops.linear(_merge_heads(ops.matmul(weights, v)), params.W_o, params.b_o)


def masked_mha(tokens: Tensor, mask: MaskLike, params: AttentionParams, num_heads: int) -> Tensor:
    """
    Multi-head self-attention with a fused mask (no residual)

    Args:
        tokens: (N_z+N_x)×C
        mask: AttentionMask, mask tensor/array, or None for full attention
        params: Projections
        num_heads: Heads; must divide C

    Raises:
        DegenerateRowError: a mask row has no allowed key
    """
    return _attend(tokens, tokens, params, num_heads, mask)


def separate_mha_oracle(
    E_z: Tensor,
    E_x: Tensor,
    D: np.ndarray,
    params: AttentionParams,
    num_heads: int,
    scheme: DivisionScheme = DivisionScheme.SA,
) -> Tensor:
    """
    Category-wise attention, one unmasked call per query category

    E_T queries attend over [E_T; E_A], E_S over [E_S; E_A] (all search tokens
    under the default scheme) and E_A over everything; the outputs are put
    back in token order. Keys and values are projected per call from the
    token subsets.
    """
    D = np.asarray(D, dtype=np.float64)
    num_template = E_z.shape[0]
    tokens = ops.concat([E_z, E_x], axis=0)
    search_columns = np.array(SCHEME_COLUMNS[scheme])[np.argmax(D, axis=1)]
    categories = np.concatenate([np.full(num_template, CAT_T), search_columns])

    outputs: List[Tensor] = []
    order: List[np.ndarray] = []
    for category in (CAT_T, CAT_S, CAT_A):
        query_idx = np.flatnonzero(categories == category)
        if query_idx.size == 0:
            continue
        key_idx = np.flatnonzero(RELATION_RULES[category, categories] > 0)
        outputs.append(_attend(tokens[query_idx], tokens[key_idx], params, num_heads, None))
        order.append(query_idx)

    stacked = ops.concat(outputs, axis=0)
    inverse = np.argsort(np.concatenate(order))
    return stacked[inverse]


# ==================== Encoder ====================

def feed_forward(x: Tensor, params: FFNParams) -> Tensor:
    return ops.linear(ops.gelu(ops.linear(x, params.W1, params.b1)), params.W2, params.b2)


def attention_residual(
    tokens: Tensor,
    params: EncoderLayerParams,
    mask: MaskLike,
    num_heads: int,
    eps: float = 1e-6,
) -> Tensor:
    """x' = x + masked_mha(LN(x), M)"""
    normed = ops.layernorm(tokens, params.ln1.gamma, params.ln1.beta, eps)
    return tokens + masked_mha(normed, mask, params.attn, num_heads)


def _ffn_residual(tokens: Tensor, params: EncoderLayerParams, eps: float) -> Tensor:
    return tokens + feed_forward(ops.layernorm(tokens, params.ln2.gamma, params.ln2.beta, eps), params.ffn)


def one_stream_layer(tokens: Tensor, params: EncoderLayerParams, num_heads: int, eps: float = 1e-6) -> Tensor:
    """Reference joint-attention block over [E_z; E_x], no division"""
    x = tokens + masked_mha(ops.layernorm(tokens, params.ln1.gamma, params.ln1.beta, eps), None, params.attn, num_heads)
    return x + feed_forward(ops.layernorm(x, params.ln2.gamma, params.ln2.beta, eps), params.ffn)


def encoder_layer(
    state: LayerState,
    params: EncoderLayerParams,
    cfg: GumbelConfig,
    policy: LayerPolicy,
    num_heads: int,
    *,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[np.ndarray] = None,
    pooling: Pooling = Pooling.MAX,
    scheme: DivisionScheme = DivisionScheme.SA,
    eps: float = 1e-6,
) -> Tuple[LayerState, Division]:
    """
    One pre-LN encoder block with search-token division

    Args:
        state: Input template/search tokens
        params: Layer parameters (predictor required for adaptive policy)
        cfg: Gumbel temperature and mode
        policy: adaptive, force_all_S or force_all_A
        num_heads: Attention heads
        rng: Gumbel noise source for adaptive layers
        noise: Frozen Gumbel noise for adaptive layers (overrides rng)
        pooling: Template aggregation of the predictor
        scheme: Division categories of the predictor
        eps: Layernorm epsilon

    Returns:
        (next state, division used by this layer)
    """
    if state.template.shape[1] != params.dim or state.search.shape[1] != params.dim:
        raise ShapeError(
            f"layer width {params.dim} does not match tokens {state.template.shape} / {state.search.shape}"
        )
    if policy == LayerPolicy.ADAPTIVE:
        pi = predict_division(state.template, state.search, params.predictor, pooling)
        division = gumbel_divide(pi, cfg, rng=rng, noise=noise, scheme=scheme)
    else:
        division = forced_division(policy, state.num_search)

    mask = division_mask(division, state.num_template)
    tokens = attention_residual(state.joined(), params, mask, num_heads, eps)
    tokens = _ffn_residual(tokens, params, eps)
    return LayerState.split(tokens, state.num_template), division


def encoder_stack(
    E_z: Tensor,
    E_x: Tensor,
    layers: Sequence[EncoderLayerParams],
    cfg: GumbelConfig,
    division_layers: Iterable[int],
    num_heads: int,
    *,
    policies: Optional[Sequence[LayerPolicy]] = None,
    rng: Optional[np.random.Generator] = None,
    noise: Optional[Mapping[int, np.ndarray]] = None,
    pooling: Pooling = Pooling.MAX,
    scheme: DivisionScheme = DivisionScheme.SA,
    eps: float = 1e-6,
) -> Tuple[Tensor, Tensor, List[Division]]:
    """
    Run L encoder layers in sequence

    Layers listed in `division_layers` (1-indexed) are adaptive, all others
    use force_all_A, unless `policies` gives the per-layer policy explicitly.
    `noise` maps a layer index to its frozen Gumbel noise.

    Returns:
        (E_z^L, E_x^L, one Division per layer)
    """
    if not layers:
        raise ConfigError("encoder needs at least one layer", key_path="model.depth")
    division_layers = set(division_layers)
    outside = sorted(i for i in division_layers if not 1 <= i <= len(layers))
    if outside:
        raise ConfigError(f"division layers {outside} outside 1..{len(layers)}", key_path="model.division_layers")
    if 1 in division_layers:
        logger.warning("Token division on the first encoder layer (its tokens carry no relation context yet)")
    if policies is None:
        policies = [
            LayerPolicy.ADAPTIVE if i in division_layers else LayerPolicy.FORCE_ALL_A
            for i in range(1, len(layers) + 1)
        ]
    elif len(policies) != len(layers):
        raise ConfigError(f"{len(policies)} policies for {len(layers)} layers", key_path="model.policy")

    state = LayerState(template=E_z, search=E_x)
    divisions: List[Division] = []
    for index, (params, policy) in enumerate(zip(layers, policies), start=1):
        with op_scope(f"encoder.layer{index}"):
            state, division = encoder_layer(
                state, params, cfg, policy, num_heads,
                rng=rng, noise=(noise or {}).get(index), pooling=pooling, scheme=scheme, eps=eps,
            )
        divisions.append(division)
    return state.template, state.search, divisions
