"""
Output schemas

Every JSON/CSV artifact the command line writes is described here; the JSON
Schemas in docs/schemas/ are generated from these models.
"""
from typing import List, Optional

from pydantic import BaseModel, Field


class DivisionRecord(BaseModel):
    """One layer's search-token division (dump format)"""
    layer: int = Field(..., ge=1, description="1-indexed encoder layer")
    pi: List[List[float]] = Field(..., description="Per-token category probabilities")
    D: List[int] = Field(..., description="Per-token index into categories (sa scheme: 1 = E_A)")
    categories: List[str] = Field(default_factory=lambda: ["E_S", "E_A"])
    form: Optional[str] = Field(None, description="two_stream | intermediate | one_stream")


class EpochRecord(BaseModel):
    """One row of the training loss CSV"""
    epoch: int
    mean_loss: float
    lr: float


class MetricsReport(BaseModel):
    """Aggregated tracking metrics printed by `eval`"""
    mean_IoU: float
    sr50: float
    sr75: float
    ea_fraction_per_layer: List[Optional[float]] = Field(
        default_factory=list,
        description="Mean fraction of search tokens assigned E_A per layer (null when unavailable)",
    )
    layer_forms: List[Optional[str]] = Field(default_factory=list)
    sequences: int = 0
    frames: int = 0


class BenchRow(BaseModel):
    """One row of the masking benchmark CSV"""
    variant: str
    mean_ms: float
    std_ms: float
    speedup: float


class AblationRow(BaseModel):
    """One row of the ablation CSV"""
    variant: str
    policy: str
    division_layers: str
    pooling: str
    scheme: str
    mean_IoU: float
    sr50: float
    sr75: float
    final_loss: Optional[float] = None
    mean_ea_fraction: Optional[float] = None


class GradCheckRow(BaseModel):
    """Worst entry of one parameter group (embedding, layer{i}, division_mlp, head)"""
    group: str
    parameters: int
    entries: int
    rel_error: float
    worst_parameter: Optional[str] = None
    passed: bool
