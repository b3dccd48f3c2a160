# eotrain/core/models.py

"""Pydantic models for model-file properties, the eotrain.yaml run config and run reports."""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .constants import DEFAULT_LOOKAHEAD, DEFAULT_SEED

SwapModeName = Literal["off", "ondemand", "reduced", "proactive"]


def normalize_swap_name(value: str) -> str:
    """Map user spellings of a swap mode onto the canonical name."""
    name = str(value).strip().lower().replace("-", "_")
    return {"on_demand": "ondemand", "none": "off"}.get(name, name)


class ModelHyper(BaseModel):
    """The [model] section of a model file"""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    batch_size: int = Field(alias="batch", ge=1)
    epochs: int = Field(default=1, ge=1)
    learning_rate: float = Field(default=0.01, ge=0.0)
    loss: Optional[Literal["mse"]] = None
    optimizer: Literal["sgd"] = "sgd"
    clip_grad_norm: Optional[float] = Field(default=None, gt=0.0)
    swap: SwapModeName = "off"
    lookahead: int = Field(default=DEFAULT_LOOKAHEAD, ge=1)
    seed: int = DEFAULT_SEED
    input_shape: Optional[str] = None

    @field_validator("swap", mode="before")
    @classmethod
    def _swap_name(cls, value: str) -> str:
        return normalize_swap_name(value)


class LayerProps(BaseModel):
    """Typed properties shared by every layer kind"""

    model_config = ConfigDict(extra="forbid", frozen=True)


class InputProps(LayerProps):
    shape: str


class WeightedProps(LayerProps):
    """Keys accepted by layers that own weights"""

    trainable: bool = True
    bias: bool = True
    activation: Optional[Literal["sigmoid", "relu"]] = None
    flatten: bool = False


class LinearProps(WeightedProps):
    units: int = Field(ge=1)


class Conv2DProps(WeightedProps):
    filters: int = Field(ge=1)
    kernel: int = Field(ge=1)
    stride: int = Field(default=1, ge=1)
    padding: str = "same"

    @field_validator("kernel", mode="before")
    @classmethod
    def _square_kernel(cls, value: object) -> object:
        if isinstance(value, str) and "x" in value.lower():
            height, width = value.lower().split("x", 1)
            if height.strip() != width.strip():
                raise ValueError(f"only square kernels are supported, got '{value}'")
            return height.strip()
        return value

    @field_validator("padding", mode="before")
    @classmethod
    def _lower_padding(cls, value: object) -> object:
        return value.strip().lower() if isinstance(value, str) else value


class ActivationProps(LayerProps):
    pass


class FlattenProps(LayerProps):
    pass


class ReshapeProps(LayerProps):
    shape: str


class MseProps(LayerProps):
    pass


class DataSettings(BaseModel):
    """Data source settings"""

    source: Literal["synthetic", "file"] = "synthetic"
    path: Optional[str] = None
    dataset_size: Optional[int] = Field(default=None, ge=1)
    distribution: Literal["normal", "uniform"] = "normal"
    task: Literal["scale", "projection", "random"] = "projection"
    scale: float = 2.0
    queue_capacity: int = Field(default=4, ge=1)


class RunSettings(BaseModel):
    """Training run settings"""

    steps: Optional[int] = Field(default=None, ge=1)
    merge: bool = True
    poison: bool = False
    store_dir: Optional[str] = None
    io_latency_ms: float = Field(default=0.0, ge=0.0)


class ReportSettings(BaseModel):
    output: Optional[str] = None
    weights: Optional[str] = None


class RunConfigModel(BaseModel):
    """Complete eotrain.yaml model"""

    version: str = "1.0"
    data: DataSettings = Field(default_factory=DataSettings)
    run: RunSettings = Field(default_factory=RunSettings)
    report: ReportSettings = Field(default_factory=ReportSettings)


class PlanSummary(BaseModel):
    """Planner figures carried in a run report"""

    tensor_count: int
    eo_max: int
    pool_bytes: int
    external_bytes: int
    peak_live_bytes: int

    @property
    def total_bytes(self) -> int:
        return self.pool_bytes + self.external_bytes


class SwapStats(BaseModel):
    """Counters for one training run under one swap mode"""

    mode: SwapModeName = "off"
    lookahead: Optional[int] = None
    swap_in_count: int = 0
    swap_out_count: int = 0
    peak_resident_bytes: int = 0
    stall_count: int = 0
    stall_seconds: float = 0.0
    per_eo_latency: List[float] = Field(default_factory=list)


class RunReport(BaseModel):
    """Everything `eotrain train` writes to its JSON report"""

    model: str
    seed: int
    iterations: int
    epoch_losses: List[float]
    iteration_losses: List[float]
    per_eo_latency: List[float]
    peak_resident_bytes: int
    swap: SwapStats
    plan: PlanSummary
    workspace_bytes: int = 0
    rss_delta_bytes: Optional[int] = None
    weights_sha256: str
    weights_file: Optional[str] = None
    weights_file_sha256: Optional[str] = None
    wall_seconds: float


class SweepRow(BaseModel):
    """One row of the swap-mode comparison table"""

    mode: SwapModeName
    lookahead: Optional[int] = None
    peak_resident_bytes: int
    swap_in_count: int
    swap_out_count: int
    stall_count: int = 0
    wall_seconds: Optional[float] = None
