"""
Run configuration schemas

A run is described by one JSON document validated against RunConfig. Every
model forbids unknown keys, so a typo in an ablation grid fails loudly
instead of silently falling back to a default. Validation failures are
re-raised as ConfigError carrying the dotted key path (e.g.
`model.patch.patch_size`).

The generated key reference lives in docs/config_reference.md
(scripts/generate_config_reference.py).
"""
import json
from enum import Enum
from pathlib import Path
from typing import Annotated, Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from grm.core.config import settings
from grm.core.errors import ConfigError

Unit = Annotated[float, Field(ge=0.0, le=1.0)]
Color = Tuple[Unit, Unit, Unit]

# Variant labels understood by the ablation grid
ABLATION_VARIANTS = ("#1", "#2", "#3", "#4", "#5", "#b", "#c", "#d", "#e")


class StrictModel(BaseModel):
    """Base for every configuration section: unknown keys are errors"""
    model_config = ConfigDict(extra="forbid")


# ==================== Enums ====================

class GumbelMode(str, Enum):
    """Division sampling mode"""
    TRAIN = "train"        # hard one-hot forward, soft backward
    EVAL = "eval"          # argmax of pi, no noise
    RELAXED = "relaxed"    # soft sample forward and backward (gradient checks)


class LayerPolicy(str, Enum):
    """How one encoder layer divides its search tokens"""
    ADAPTIVE = "adaptive"
    FORCE_ALL_S = "force_all_S"
    FORCE_ALL_A = "force_all_A"


class PipelinePolicy(str, Enum):
    """Division policy of the whole encoder"""
    ADAPTIVE = "adaptive"
    TWO_STREAM = "two_stream"
    ONE_STREAM = "one_stream"


class Pooling(str, Enum):
    """Template aggregation for the division predictor"""
    MAX = "max"
    AVG = "avg"


class DivisionScheme(str, Enum):
    """Categories a search token can be assigned to"""
    SA = "sa"      # E_S / E_A
    TS = "ts"      # E_T / E_S
    TSA = "tsa"    # E_T / E_S / E_A


class RegressionAnchor(str, Enum):
    """Cell at which GIoU and L1 are evaluated during training"""
    GT = "gt"
    PRED = "pred"


class ScenarioPreset(str, Enum):
    EASY = "easy"
    DISTRACTOR = "distractor"


# ==================== Model ====================

class PatchConfig(StrictModel):
    """Patch embedding geometry"""
    patch_size: int = Field(8, ge=1, description="Patch side P in pixels")
    embed_dim: int = Field(64, ge=1, description="Token width C")
    template_size: int = Field(32, ge=1, description="Template crop side H_z = W_z in pixels")
    search_size: int = Field(64, ge=1, description="Search crop side H_x = W_x in pixels")

    @model_validator(mode="after")
    def _patch_divides_crops(self) -> "PatchConfig":
        for name in ("template_size", "search_size"):
            if getattr(self, name) % self.patch_size:
                raise ValueError(f"patch_size {self.patch_size} does not divide {name} {getattr(self, name)}")
        return self

    @property
    def template_grid(self) -> int:
        return self.template_size // self.patch_size

    @property
    def search_grid(self) -> int:
        return self.search_size // self.patch_size

    @property
    def num_template_tokens(self) -> int:
        return self.template_grid ** 2

    @property
    def num_search_tokens(self) -> int:
        return self.search_grid ** 2

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size ** 2


class ModelConfig(StrictModel):
    """Encoder and head shape, division placement and policy"""
    patch: PatchConfig = Field(default_factory=PatchConfig)
    depth: int = Field(4, ge=1, description="Number of encoder layers L")
    num_heads: int = Field(4, ge=1)
    mlp_ratio: int = Field(4, ge=1, description="FFN hidden width as a multiple of C")
    policy: PipelinePolicy = PipelinePolicy.ADAPTIVE
    division_layers: Optional[List[int]] = Field(
        None, description="1-indexed layers with a division predictor; default 2..L"
    )
    pooling: Pooling = Pooling.MAX
    scheme: DivisionScheme = DivisionScheme.SA
    init_std: float = Field(0.02, gt=0.0, description="Std of the normal initializer")
    layernorm_eps: float = Field(1e-6, gt=0.0)

    @model_validator(mode="after")
    def _check_shapes(self) -> "ModelConfig":
        width = self.patch.embed_dim
        if width % self.num_heads:
            raise ValueError(f"num_heads {self.num_heads} does not divide embed_dim {width}")
        if width % 16:
            raise ValueError(f"embed_dim {width} must be a multiple of 16 (head halves channels 4 times)")
        if self.division_layers is not None:
            bad = [i for i in self.division_layers if not 1 <= i <= self.depth]
            if bad:
                raise ValueError(f"division_layers {bad} outside 1..{self.depth}")
            if len(set(self.division_layers)) != len(self.division_layers):
                raise ValueError("division_layers contains duplicates")
        return self

    def resolved_division_layers(self) -> List[int]:
        if self.division_layers is None:
            return list(range(2, self.depth + 1))
        return sorted(self.division_layers)

    def layer_policies(self) -> List[LayerPolicy]:
        """Per-layer policy implied by the pipeline policy (index 0 is layer 1)"""
        if self.policy == PipelinePolicy.ONE_STREAM:
            return [LayerPolicy.FORCE_ALL_A] * self.depth
        if self.policy == PipelinePolicy.TWO_STREAM:
            # the last layer acts as the correlation stage
            return [LayerPolicy.FORCE_ALL_S] * (self.depth - 1) + [LayerPolicy.FORCE_ALL_A]
        adaptive = set(self.resolved_division_layers())
        return [
            LayerPolicy.ADAPTIVE if layer in adaptive else LayerPolicy.FORCE_ALL_A
            for layer in range(1, self.depth + 1)
        ]

    def predictor_layers(self) -> List[int]:
        """Layers that own division predictor parameters"""
        if self.policy != PipelinePolicy.ADAPTIVE:
            return []
        return self.resolved_division_layers()


class GumbelConfig(StrictModel):
    tau: float = Field(1.0, gt=0.0, description="Gumbel-Softmax temperature")
    rng_seed: int = 0
    mode: GumbelMode = GumbelMode.TRAIN


# ==================== Loss ====================

class LossWeights(StrictModel):
    lambda_center: float = Field(1.0, ge=0.0)
    lambda_giou: float = Field(2.0, ge=0.0)
    lambda_l1: float = Field(5.0, ge=0.0)

    @model_validator(mode="after")
    def _one_positive(self) -> "LossWeights":
        if max(self.lambda_center, self.lambda_giou, self.lambda_l1) <= 0:
            raise ValueError("at least one loss weight must be positive")
        return self


class LossConfig(StrictModel):
    weights: LossWeights = Field(default_factory=LossWeights)
    focal_alpha: float = Field(2.0, ge=0.0)
    focal_beta: float = Field(4.0, ge=0.0)
    sigma_factor: float = Field(1.0 / 6.0, gt=0.0, description="Gaussian sigma per grid cell of mean box side")
    sigma_floor: float = Field(0.5, gt=0.0, description="Minimum Gaussian sigma in grid cells")
    anchor: RegressionAnchor = RegressionAnchor.GT


# ==================== Data ====================

class CropConfig(StrictModel):
    template_factor: float = Field(2.0, gt=0.0, description="Template side / sqrt(w*h)")
    search_factor: float = Field(4.0, gt=0.0, description="Search side / sqrt(w*h)")


class ObjectSpec(StrictModel):
    """A moving rectangle on the synthetic canvas"""
    color: Color
    size: Tuple[float, float] = Field(..., description="Width, height in pixels")
    motion_amplitude: float = Field(2.0, ge=0.0, description="Maximum displacement per frame in pixels")

    @field_validator("size")
    @classmethod
    def _positive_size(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if min(value) <= 0:
            raise ValueError(f"object size must be positive, got {value}")
        return value


class SyntheticScenario(StrictModel):
    seed: int
    frame_count: int = Field(30, ge=2)
    canvas_size: int = Field(128, ge=16)
    background: Color = (0.1, 0.1, 0.1)
    target: ObjectSpec
    distractors: List[ObjectSpec] = Field(default_factory=list)
    noise: float = Field(0.0, ge=0.0, description="Std of additive pixel noise")


class ScenarioSuite(StrictModel):
    """Seeded family of scenarios; scenario i uses seed `seed + i`"""
    preset: ScenarioPreset = ScenarioPreset.EASY
    count: int = Field(8, ge=1)
    seed: int = 0
    frame_count: int = Field(30, ge=2)
    canvas_size: int = Field(128, ge=16)

    def seeds(self) -> range:
        return range(self.seed, self.seed + self.count)


# ==================== Training ====================

class OptimizerConfig(StrictModel):
    """AdamW hyperparameters"""
    weight_decay: float = Field(1e-4, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)
    grad_clip_norm: Optional[float] = Field(1.0, gt=0.0, description="Global gradient norm clip; null disables")


class TrainConfig(StrictModel):
    epochs: int = Field(40, ge=0)
    pairs_per_epoch: int = Field(100, ge=1)
    learning_rate: float = Field(1e-3, gt=0.0)
    decay_epoch: Optional[int] = Field(None, ge=0, description="Epoch at which the rate decays; default 80% of epochs")
    decay_factor: float = Field(0.1, gt=0.0, le=1.0)
    max_gap: int = Field(10, ge=1, description="Search frame offset drawn from [1, max_gap]")
    center_jitter: float = Field(1.5, ge=0.0, description="Search center shift in units of sqrt(w*h)")
    scale_jitter: float = Field(0.2, ge=0.0, description="Log-scale jitter of the search crop")
    gumbel: GumbelConfig = Field(default_factory=GumbelConfig)
    loss: LossConfig = Field(default_factory=LossConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    scenarios: ScenarioSuite = Field(default_factory=ScenarioSuite)

    @model_validator(mode="after")
    def _decay_before_end(self) -> "TrainConfig":
        if self.decay_epoch is not None and self.epochs > 0 and self.decay_epoch >= self.epochs:
            raise ValueError(f"decay_epoch {self.decay_epoch} must be < epochs {self.epochs}")
        return self

    def resolved_decay_epoch(self) -> int:
        if self.decay_epoch is not None:
            return self.decay_epoch
        return int(0.8 * self.epochs)


# ==================== Evaluation / Ablation ====================

def _default_eval_suite() -> ScenarioSuite:
    return ScenarioSuite(preset=ScenarioPreset.EASY, count=10, seed=10_000)


def _default_ablation_suite() -> ScenarioSuite:
    return ScenarioSuite(preset=ScenarioPreset.DISTRACTOR, count=10, seed=20_000)


class EvalConfig(StrictModel):
    suite: ScenarioSuite = Field(default_factory=_default_eval_suite)


class AblationConfig(StrictModel):
    variants: List[str] = Field(default_factory=lambda: ["#1", "#2", "#5", "#b", "#c", "#d", "#e"])
    # training scenarios of every variant are drawn from this preset
    train_preset: ScenarioPreset = ScenarioPreset.DISTRACTOR
    suite: ScenarioSuite = Field(default_factory=_default_ablation_suite)

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, value: List[str]) -> List[str]:
        unknown = [v for v in value if v not in ABLATION_VARIANTS]
        if unknown:
            raise ValueError(f"unknown variants {unknown}; expected a subset of {list(ABLATION_VARIANTS)}")
        if not value:
            raise ValueError("at least one variant is required")
        return value


# ==================== Run ====================

class RunConfig(StrictModel):
    """Top-level run configuration"""
    seed: int = 0
    model: ModelConfig = Field(default_factory=ModelConfig)
    crop: CropConfig = Field(default_factory=CropConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    ablation: AblationConfig = Field(default_factory=AblationConfig)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _disjoint_suites(self) -> "RunConfig":
        train_seeds = set(self.train.scenarios.seeds())
        for name, suite in (("eval.suite", self.eval.suite), ("ablation.suite", self.ablation.suite)):
            if train_seeds.intersection(suite.seeds()):
                raise ValueError(f"{name} seeds overlap train.scenarios seeds")
        return self

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or settings.OUTPUT_DIR)


def _key_path(loc: Tuple[Union[int, str], ...]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def config_error(exc: ValidationError) -> ConfigError:
    """Convert the first pydantic error into a ConfigError with its key path"""
    first = exc.errors()[0]
    return ConfigError(first["msg"], key_path=_key_path(tuple(first["loc"])))


def parse_run_config(data: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise config_error(e) from e


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Read and validate a JSON run configuration

    Args:
        path: Path of the JSON document

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: file missing, not JSON, or failing validation
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise ConfigError("configuration file not found", key_path=str(path)) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON at line {e.lineno} column {e.colno}: {e.msg}", key_path=str(path)) from e
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object", key_path=str(path))
    return parse_run_config(data)


def apply_overrides(cfg: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """
    Return a re-validated copy of `cfg` with dotted keys replaced

    Example:
        apply_overrides(cfg, {"model.policy": "one_stream", "seed": 3})
    """
    data: Dict[str, Any] = cfg.model_dump(mode="json")
    for dotted, value in overrides.items():
        node = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            if not isinstance(node.get(part), dict):
                raise ConfigError("unknown configuration section", key_path=dotted)
            node = node[part]
        node[leaf] = value
    return parse_run_config(data)
