# eotrain/core/compiler.py

"""
eotrain compile pipeline

realize -> shapes -> execution orders -> spatial relations -> merge -> memory plan
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Tuple

from .exceptions import PlanningError
from .exec_order import (
    ExecPlan,
    TensorSpec,
    assign_execution_orders,
    assign_spatial_relations,
    disable_merging,
    merge_tensors,
)
from .graph import Dim4, ModelGraph, infer_shapes, realize
from .models import PlanSummary
from .planner import MemoryPlan, plan_memory, validate_plan

logger = logging.getLogger("eotrain.compiler")


@dataclass(frozen=True)
class CompiledModel:
    """Everything the runtime needs to train one model.

    `tensors` holds one spec per logical tensor with the requested spatial relation;
    `merged` holds one spec per storage group with the relation actually applied.
    """

    graph: ModelGraph
    shapes: Dict[str, Tuple[Dim4, Dim4]]
    exec_plan: ExecPlan
    tensors: Tuple[TensorSpec, ...]
    merged: Tuple[TensorSpec, ...]
    memory: MemoryPlan
    merge: bool = True

    def spec(self, name: str) -> TensorSpec:
        """Logical spec of `name` (aliases included)."""
        for group in self.merged:
            for member in group.members:
                if member.name == name:
                    return member
        raise KeyError(name)

    def group(self, name: str) -> TensorSpec:
        """Storage group that holds `name`."""
        root = self.memory.root_of(name)
        for group in self.merged:
            if group.name == root:
                return group
        raise KeyError(name)

    def summary(self) -> PlanSummary:
        return PlanSummary(
            tensor_count=len(self.tensors),
            eo_max=self.exec_plan.eo_max,
            pool_bytes=self.memory.pool_bytes,
            external_bytes=self.memory.external_bytes,
            peak_live_bytes=self.memory.peak_live_bytes,
        )


def compile_model(graph: ModelGraph, merge: bool = True) -> CompiledModel:
    """Run the full planning pipeline on a parsed graph.

    Args:
        graph: Parsed (or already realized) model graph
        merge: Fold MV/RV tensors into their targets; False forces every relation to C

    Returns:
        CompiledModel: Realized graph, execution plan, tensors and memory plan

    Raises:
        PlanningError: The planner produced overlapping live tensors
    """
    realized = realize(graph)
    shapes = infer_shapes(realized)
    exec_plan, tensors = assign_execution_orders(realized)
    tensors = assign_spatial_relations(realized, tensors)
    if not merge:
        tensors = disable_merging(tensors)
    merged = merge_tensors(tensors)
    memory = plan_memory(merged)
    conflicts = validate_plan(memory, merged)
    if conflicts:
        raise PlanningError(f"memory plan has {len(conflicts)} conflicts: {conflicts[0]}")

    logger.debug(
        f"Compiled '{graph.name}': {len(exec_plan.bindings)} compute layers, "
        f"{len(tensors)} tensors in {len(merged)} groups, pool={memory.pool_bytes} B"
    )
    return CompiledModel(
        graph=realized,
        shapes=shapes,
        exec_plan=exec_plan,
        tensors=tuple(tensors),
        merged=tuple(merged),
        memory=memory,
        merge=merge,
    )


def plan_report(compiled: CompiledModel) -> Dict[str, Any]:
    """Machine-readable plan: steps, tensors, assignments and byte figures."""
    steps: List[Dict[str, Any]] = [
        {"eo": s.eo, "layer": s.layer, "proc": s.proc.value} for s in compiled.exec_plan.steps
    ]
    tensors: List[Dict[str, Any]] = []
    for group in compiled.merged:
        for member in group.members:
            placement = (
                None
                if member.is_placeholder
                else compiled.memory.assignment(member.name).offset
            )
            tensors.append(
                {
                    "name": member.name,
                    "dim": str(member.dim),
                    "bytes": member.size_bytes,
                    "temporal": sorted(r.value for r in member.temporal),
                    "spatial": str(member.spatial),
                    "eos": list(member.eos),
                    "lifetime": list(member.lifetime),
                    "group": group.name,
                    "offset": placement,
                }
            )
    report: Dict[str, Any] = {
        "model": compiled.graph.name,
        "merge": compiled.merge,
        "eo_max": compiled.exec_plan.eo_max,
        "clip_eo": compiled.exec_plan.clip_eo,
        "steps": steps,
        "tensors": tensors,
    }
    report.update(compiled.memory.to_dict())
    return report
