"""Core functionality for eotrain: model graphs, execution orders, planning, kernels,
swapping and the training loop."""

from .compiler import CompiledModel, compile_model, plan_report
from .config import TrainerConfig
from .constants import DEFAULT_CONFIG_NAME
from .data import BatchQueue, DataProducer, write_records
from .exceptions import (
    DivergenceError,
    EotrainError,
    LifetimeError,
    MissingPropertyError,
    ModelSyntaxError,
    PlanningError,
    RealizeError,
    ResidencyError,
    ShapeError,
    SwapIOError,
    UnknownLayerKindError,
    UnknownPropertyError,
)
from .exec_order import (
    assign_execution_orders,
    assign_spatial_relations,
    disable_merging,
    layer_execution_orders,
    merge_tensors,
)
from .graph import Dim4, LayerKind, ModelGraph, infer_shapes, parse_model, realize
from .hashing import hash_weights, max_abs_delta
from .models import RunConfigModel, RunReport, SwapStats, SweepRow
from .oracle import oracle_gradients, reference_oracle
from .planner import live_bytes_per_eo, peak_live_lower_bound, plan_memory, validate_plan
from .seed import make_rng, set_seed
from .swap import SwapMode, SwapStore, build_swap_schedule, swap_stats
from .tensor import materialize
from .trainer import (
    TrainOptions,
    Trainer,
    TrainResult,
    VerifyResult,
    export_weights,
    load_weights,
    train,
    verify,
)
from .utils import find_config, load_model

__all__ = [
    # Graph
    "Dim4",
    "LayerKind",
    "ModelGraph",
    "parse_model",
    "realize",
    "infer_shapes",
    # Execution orders and merging
    "assign_execution_orders",
    "assign_spatial_relations",
    "disable_merging",
    "layer_execution_orders",
    "merge_tensors",
    # Planning
    "CompiledModel",
    "compile_model",
    "plan_report",
    "plan_memory",
    "validate_plan",
    "peak_live_lower_bound",
    "live_bytes_per_eo",
    "materialize",
    # Swap
    "SwapMode",
    "SwapStore",
    "build_swap_schedule",
    "swap_stats",
    # Training
    "BatchQueue",
    "DataProducer",
    "write_records",
    "TrainOptions",
    "Trainer",
    "TrainResult",
    "VerifyResult",
    "train",
    "verify",
    "export_weights",
    "load_weights",
    "oracle_gradients",
    "reference_oracle",
    # Config
    "TrainerConfig",
    "RunConfigModel",
    "RunReport",
    "SwapStats",
    "SweepRow",
    "find_config",
    "load_model",
    # Hashing and seeds
    "hash_weights",
    "max_abs_delta",
    "make_rng",
    "set_seed",
    # Exceptions
    "EotrainError",
    "ModelSyntaxError",
    "UnknownLayerKindError",
    "MissingPropertyError",
    "UnknownPropertyError",
    "RealizeError",
    "ShapeError",
    "PlanningError",
    "LifetimeError",
    "ResidencyError",
    "SwapIOError",
    "DivergenceError",
    # Constants
    "DEFAULT_CONFIG_NAME",
]
