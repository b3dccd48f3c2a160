# eotrain/core/exec_order.py

"""
eotrain execution-order module

Assigns an execution order (EO) to the four fine-grained procedures of every layer,
collects the tensor requests each procedure makes together with their temporal and
spatial relations, and merges tensors that can share storage.

Naming: compute layers are indexed 0..N-1. `X0` is the external input, `X{i+1}` the
output of layer i, `D{i+1}` the derivative arriving at layer i, `W{i}`/`b{i}` the
weights and `dW{i}`/`db{i}` their gradients. `Y` is the label and `R` the loss
residual.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Set, Tuple

from .constants import ELEM_BYTES
from .exceptions import PlanningError
from .graph import Dim4, InplaceClass, LayerNode, ModelGraph, infer_shapes
from .models import Conv2DProps, LinearProps

logger = logging.getLogger("eotrain.exec_order")


class ProcKind(str, Enum):
    F = "F"
    CG = "CG"
    CD = "CD"
    AG = "AG"


class TemporalRelation(str, Enum):
    F = "F"
    CG = "CG"
    CD = "CD"
    AG = "AG"
    B = "B"
    I = "I"  # noqa: E741
    M = "M"


PERSISTENT_RELATIONS = frozenset({TemporalRelation.I, TemporalRelation.M})


class SpatialKind(str, Enum):
    P = "P"
    C = "C"
    MV = "MV"
    RV = "RV"
    E = "E"


@dataclass(frozen=True)
class SpatialRelation:
    kind: SpatialKind
    target: Optional[str] = None

    def __post_init__(self) -> None:
        needs_target = self.kind in (SpatialKind.MV, SpatialKind.RV, SpatialKind.E)
        if needs_target != (self.target is not None):
            raise PlanningError(f"spatial relation {self.kind.value} with target {self.target!r}")

    def __str__(self) -> str:
        return f"{self.kind.value}({self.target})" if self.target else self.kind.value

    @classmethod
    def create(cls) -> "SpatialRelation":
        return cls(SpatialKind.C)

    @classmethod
    def placeholder(cls) -> "SpatialRelation":
        return cls(SpatialKind.P)

    @classmethod
    def modify_view(cls, target: str) -> "SpatialRelation":
        return cls(SpatialKind.MV, target)

    @classmethod
    def read_only_view(cls, target: str) -> "SpatialRelation":
        return cls(SpatialKind.RV, target)


class TensorRole(str, Enum):
    WEIGHT = "W"
    GRADIENT = "dW"
    ACTIVATION = "X"
    DERIVATIVE = "dD"
    LABEL = "Y"


@dataclass(frozen=True)
class TensorSpec:
    """A named buffer request.

    `eos` holds every EO at which the tensor is read or written and `write_eos` the
    subset that writes it. A merged tensor keeps the specs folded into it in
    `aliases`; each alias keeps its own dims and EOs.
    """

    name: str
    dim: Dim4
    role: TensorRole
    temporal: FrozenSet[TemporalRelation]
    spatial: SpatialRelation
    eos: Tuple[int, ...]
    write_eos: Tuple[int, ...] = ()
    owner: Optional[str] = None
    span: Optional[Tuple[int, int]] = None
    aliases: Tuple["TensorSpec", ...] = ()
    elem_bytes: int = ELEM_BYTES

    @property
    def size_bytes(self) -> int:
        return self.dim.element_count * self.elem_bytes

    @property
    def is_placeholder(self) -> bool:
        return self.spatial.kind is SpatialKind.P

    @property
    def persistent(self) -> bool:
        return bool(self.temporal & PERSISTENT_RELATIONS)

    @property
    def min_eo(self) -> int:
        if not self.eos:
            raise PlanningError(f"tensor '{self.name}' has an empty EO set")
        return self.eos[0]

    @property
    def max_eo(self) -> int:
        if not self.eos:
            raise PlanningError(f"tensor '{self.name}' has an empty EO set")
        return self.eos[-1]

    @property
    def lifetime(self) -> Tuple[int, int]:
        """Inclusive [first, last] EO during which the data must stay valid."""
        if self.span is not None:
            return self.span
        return (self.min_eo, self.max_eo)

    @property
    def members(self) -> Tuple["TensorSpec", ...]:
        return (self,) + self.aliases


@dataclass(frozen=True)
class ExecStep:
    eo: int
    layer: str
    proc: ProcKind
    rank: int = field(default=0, compare=False)


@dataclass(frozen=True)
class LayerBinding:
    """Tensor names and EOs of one compute layer."""

    node: LayerNode
    index: int
    in_dim: Dim4
    out_dim: Dim4
    input: str
    output: str
    eos: Dict[ProcKind, int]
    incoming_derivative: Optional[str] = None
    outgoing_derivative: Optional[str] = None
    weight: Optional[str] = None
    bias: Optional[str] = None
    weight_grad: Optional[str] = None
    bias_grad: Optional[str] = None

    @property
    def computes_gradient(self) -> bool:
        return self.weight_grad is not None

    @property
    def computes_derivative(self) -> bool:
        return self.outgoing_derivative is not None


@dataclass(frozen=True)
class LossBinding:
    node: LayerNode
    dim: Dim4
    prediction: str
    label: str
    residual: str
    eos: Dict[ProcKind, int]
    derivative: Optional[str] = None


@dataclass(frozen=True)
class ExecPlan:
    """Steps of one training iteration, ordered by (eo, rank)."""

    steps: Tuple[ExecStep, ...]
    eo_max: int
    bindings: Tuple[LayerBinding, ...]
    loss: LossBinding
    clip_eo: Optional[int] = None

    def steps_by_eo(self) -> Dict[int, Tuple[ExecStep, ...]]:
        grouped: Dict[int, List[ExecStep]] = {}
        for step in self.steps:
            grouped.setdefault(step.eo, []).append(step)
        return {eo: tuple(steps) for eo, steps in grouped.items()}

    def binding(self, layer_id: str) -> LayerBinding:
        for binding in self.bindings:
            if binding.node.id == layer_id:
                return binding
        raise KeyError(layer_id)


def activation_name(index: int) -> str:
    return f"X{index}"


def derivative_name(index: int) -> str:
    return f"D{index}"


LABEL_NAME = "Y"
RESIDUAL_NAME = "R"


def layer_execution_orders(
    index: int, count: int, *, frozen: bool = False, clipping: bool = False
) -> Dict[ProcKind, int]:
    """EOs of layer `index` in a chain of `count` compute layers.

    Backward EOs use the reversed index r = count-1-index so the last layer runs
    first. With clipping, every AG is moved after every CG/CD. Frozen layers
    collapse CG/CD/AG onto the CG slot.
    """
    r = count - 1 - index
    if clipping:
        cg = count + 2 * r
        cd, ag = cg + 1, 3 * count + r
    else:
        cg = count + 3 * r
        cd, ag = cg + 1, cg + 2
    if frozen:
        cd = ag = cg
    return {ProcKind.F: index, ProcKind.CG: cg, ProcKind.CD: cd, ProcKind.AG: ag}


class _RequestTable:
    """Mutable accumulator used while walking the layers."""

    def __init__(self) -> None:
        self._order: List[str] = []
        self._dims: Dict[str, Dim4] = {}
        self._roles: Dict[str, TensorRole] = {}
        self._owners: Dict[str, Optional[str]] = {}
        self._temporal: Dict[str, Set[TemporalRelation]] = {}
        self._eos: Dict[str, Set[int]] = {}
        self._writes: Dict[str, Set[int]] = {}

    def touch(
        self,
        name: str,
        dim: Dim4,
        role: TensorRole,
        owner: Optional[str],
        eo: int,
        proc: Optional[ProcKind],
        *,
        write: bool = False,
        persistent: bool = False,
    ) -> None:
        if name not in self._dims:
            self._order.append(name)
            self._dims[name] = dim
            self._roles[name] = role
            self._owners[name] = owner
            self._temporal[name] = set()
            self._eos[name] = set()
            self._writes[name] = set()
        elif self._dims[name].element_count != dim.element_count:
            raise PlanningError(f"tensor '{name}' requested with {self._dims[name]} and {dim}")
        if persistent:
            self._temporal[name].add(TemporalRelation.M)
        elif proc is not None:
            self._temporal[name].add(TemporalRelation(proc.value))
        self._eos[name].add(eo)
        if write:
            self._writes[name].add(eo)

    def touch_param(
        self, name: str, dim: Dim4, owner: str, eo: int, *, write: bool = False
    ) -> None:
        self.touch(name, dim, TensorRole.WEIGHT, owner, eo, None, write=write, persistent=True)

    def specs(self, eo_max: int, placeholders: Set[str]) -> List[TensorSpec]:
        specs = []
        for name in self._order:
            temporal = frozenset(self._temporal[name])
            persistent = bool(temporal & PERSISTENT_RELATIONS)
            specs.append(
                TensorSpec(
                    name=name,
                    dim=self._dims[name],
                    role=self._roles[name],
                    temporal=temporal,
                    spatial=(
                        SpatialRelation.placeholder()
                        if name in placeholders
                        else SpatialRelation.create()
                    ),
                    eos=tuple(sorted(self._eos[name])),
                    write_eos=tuple(sorted(self._writes[name])),
                    owner=self._owners[name],
                    span=(0, eo_max - 1) if persistent else None,
                )
            )
        return specs


def parameter_dims(node: LayerNode, in_dim: Dim4) -> Tuple[Dim4, Optional[Dim4]]:
    """Weight dims and optional bias dims of a weighted layer."""
    props = node.props()
    if isinstance(props, LinearProps):
        weight = Dim4(1, 1, in_dim.feature_count, props.units)
        return weight, Dim4(1, 1, 1, props.units) if props.bias else None
    if isinstance(props, Conv2DProps):
        weight = Dim4(props.filters, in_dim.channel, props.kernel, props.kernel)
        return weight, Dim4(1, 1, 1, props.filters) if props.bias else None
    raise PlanningError(f"layer '{node.id}' has no weights")


def _bind_layers(graph: ModelGraph) -> Tuple[Tuple[LayerBinding, ...], LossBinding]:
    shapes = infer_shapes(graph)
    compute = graph.compute_layers
    count = len(compute)
    clipping = graph.hyper.clip_grad_norm is not None

    bindings: List[LayerBinding] = []
    trains_before = False
    for i, node in enumerate(compute):
        in_dim, out_dim = shapes[node.id]
        trains = node.has_weights and node.trainable
        binding = LayerBinding(
            node=node,
            index=i,
            in_dim=in_dim,
            out_dim=out_dim,
            input=activation_name(i),
            output=activation_name(i + 1),
            eos=layer_execution_orders(i, count, frozen=node.is_frozen, clipping=clipping),
            # the incoming derivative exists iff some layer at or before i trains
            incoming_derivative=derivative_name(i + 1) if (trains_before or trains) else None,
            outgoing_derivative=derivative_name(i) if trains_before else None,
        )
        if node.has_weights:
            weight_dim, bias_dim = parameter_dims(node, in_dim)
            binding = replace(
                binding,
                weight=f"W{i}",
                bias=f"b{i}" if bias_dim is not None else None,
                weight_grad=f"dW{i}" if trains else None,
                bias_grad=f"db{i}" if (trains and bias_dim is not None) else None,
            )
        bindings.append(binding)
        trains_before = trains_before or trains

    loss_node = graph.loss_node
    _, loss_dim = shapes[loss_node.id]
    loss = LossBinding(
        node=loss_node,
        dim=loss_dim,
        prediction=activation_name(count),
        label=LABEL_NAME,
        residual=RESIDUAL_NAME,
        eos={ProcKind.F: count - 1, ProcKind.CD: count},
        derivative=derivative_name(count) if trains_before else None,
    )
    return tuple(bindings), loss


def _collect_requests(
    bindings: Tuple[LayerBinding, ...], loss: LossBinding, clip_eo: Optional[int]
) -> _RequestTable:
    table = _RequestTable()
    act, der = TensorRole.ACTIVATION, TensorRole.DERIVATIVE
    for b in bindings:
        owner, eos = b.node.id, b.eos
        f, cg, cd, ag = eos[ProcKind.F], eos[ProcKind.CG], eos[ProcKind.CD], eos[ProcKind.AG]
        params: Dict[str, Dim4] = {}
        grads: Dict[str, Dim4] = {}
        if b.node.has_weights and b.weight is not None:
            weight_dim, bias_dim = parameter_dims(b.node, b.in_dim)
            params[b.weight] = weight_dim
            if b.bias is not None and bias_dim is not None:
                params[b.bias] = bias_dim
            if b.weight_grad is not None:
                grads[b.weight_grad] = weight_dim
            if b.bias_grad is not None and bias_dim is not None:
                grads[b.bias_grad] = bias_dim

        table.touch(b.input, b.in_dim, act, owner, f, ProcKind.F)
        table.touch(b.output, b.out_dim, act, owner, f, ProcKind.F, write=True)
        for name in params:
            table.touch_param(name, params[name], owner, f)

        if b.computes_gradient and b.incoming_derivative is not None:
            table.touch(b.input, b.in_dim, act, owner, cg, ProcKind.CG)
            table.touch(b.incoming_derivative, b.out_dim, der, owner, cg, ProcKind.CG)
            for name, dim in grads.items():
                table.touch(name, dim, TensorRole.GRADIENT, owner, cg, ProcKind.CG, write=True)

        if b.outgoing_derivative is not None and b.incoming_derivative is not None:
            table.touch(b.incoming_derivative, b.out_dim, der, owner, cd, ProcKind.CD)
            if b.weight is not None:
                table.touch_param(b.weight, params[b.weight], owner, cd)
            elif b.node.inplace_class is InplaceClass.MODIFY_VIEW:
                # in-place activations differentiate from their output
                table.touch(b.output, b.out_dim, act, owner, cd, ProcKind.CD)
            table.touch(b.outgoing_derivative, b.in_dim, der, owner, cd, ProcKind.CD, write=True)

        if b.computes_gradient:
            for name in params:
                table.touch_param(name, params[name], owner, ag, write=True)
            for name, dim in grads.items():
                table.touch(name, dim, TensorRole.GRADIENT, owner, ag, ProcKind.AG)
                if clip_eo is not None:
                    table.touch(name, dim, TensorRole.GRADIENT, owner, clip_eo, None, write=True)

    owner = loss.node.id
    f, cd = loss.eos[ProcKind.F], loss.eos[ProcKind.CD]
    table.touch(loss.prediction, loss.dim, act, owner, f, ProcKind.F)
    table.touch(loss.label, loss.dim, TensorRole.LABEL, owner, f, ProcKind.F)
    table.touch(loss.residual, loss.dim, der, owner, f, ProcKind.F, write=True)
    if loss.derivative is not None:
        table.touch(loss.residual, loss.dim, der, owner, cd, ProcKind.CD)
        table.touch(loss.derivative, loss.dim, der, owner, cd, ProcKind.CD, write=True)
    return table


def assign_execution_orders(graph: ModelGraph) -> Tuple[ExecPlan, List[TensorSpec]]:
    """Assign EOs to every procedure and collect the tensor requests.

    Args:
        graph: A realized model graph

    Returns:
        (ExecPlan, tensor specs in request order). Spatial relations are C except
        for the external input and label, which are P.
    """
    bindings, loss = _bind_layers(graph)
    count = len(bindings)
    eo_max = 4 * count
    clip_eo = 3 * count if graph.hyper.clip_grad_norm is not None else None

    steps: List[ExecStep] = []
    for b in bindings:
        steps.append(ExecStep(b.eos[ProcKind.F], b.node.id, ProcKind.F))
        if b.node.is_frozen:
            steps.append(ExecStep(b.eos[ProcKind.CD], b.node.id, ProcKind.CD))
            continue
        for proc in (ProcKind.CG, ProcKind.CD, ProcKind.AG):
            steps.append(ExecStep(b.eos[proc], b.node.id, proc))
    # the loss shares the EO of the last forward and of the first backward step
    steps.append(ExecStep(loss.eos[ProcKind.F], loss.node.id, ProcKind.F, rank=1))
    if loss.derivative is not None:
        steps.append(ExecStep(loss.eos[ProcKind.CD], loss.node.id, ProcKind.CD, rank=-1))
    steps.sort(key=lambda s: (s.eo, s.rank))

    table = _collect_requests(bindings, loss, clip_eo)
    tensors = table.specs(eo_max, placeholders={activation_name(0), LABEL_NAME})
    plan = ExecPlan(tuple(steps), eo_max, bindings, loss, clip_eo)
    logger.debug(f"Assigned {len(steps)} steps over {eo_max} EOs; {len(tensors)} tensors")
    return plan, tensors


def assign_spatial_relations(graph: ModelGraph, tensors: List[TensorSpec]) -> List[TensorSpec]:
    """Attach MV/RV relations derived from each producer's in-place class.

    Views of external (P) tensors stay C so the arena never aliases caller buffers.
    """
    by_name = {t.name: t for t in tensors}
    relations = {t.name: t.spatial for t in tensors}

    def link(name: str, target: str, inplace: InplaceClass) -> None:
        if name not in by_name or inplace is InplaceClass.NONE:
            return
        if target not in by_name:
            raise PlanningError(f"view target '{target}' of '{name}' does not exist")
        if by_name[target].is_placeholder:
            logger.debug(f"{name}: target {target} is external, keeping C")
            return
        if inplace is InplaceClass.MODIFY_VIEW:
            relations[name] = SpatialRelation.modify_view(target)
        else:
            relations[name] = SpatialRelation.read_only_view(target)

    compute = graph.compute_layers
    for i, node in enumerate(compute):
        link(activation_name(i + 1), activation_name(i), node.inplace_class)
        link(derivative_name(i), derivative_name(i + 1), node.inplace_class)
    link(derivative_name(len(compute)), RESIDUAL_NAME, InplaceClass.MODIFY_VIEW)
    return [replace(t, spatial=relations[t.name]) for t in tensors]


def disable_merging(tensors: List[TensorSpec]) -> List[TensorSpec]:
    """Force every non-placeholder relation to C."""
    create = SpatialRelation.create()
    return [t if t.is_placeholder else replace(t, spatial=create) for t in tensors]


def merge_tensors(tensors: List[TensorSpec]) -> List[TensorSpec]:
    """Fold MV/RV/E tensors into their targets.

    Tensors are visited by ascending min EO. An MV request merges only if its first
    EO is not before the last EO of the target group; otherwise it is downgraded
    to C. RV and E always merge.

    Returns:
        One spec per storage group, in request order of the group roots
    """
    by_name = {t.name: t for t in tensors}
    parent = {t.name: t.name for t in tensors}
    group_max = {t.name: t.max_eo for t in tensors}
    final = {t.name: t.spatial for t in tensors}

    def find(name: str) -> str:
        while parent[name] != name:
            parent[name] = parent[parent[name]]
            name = parent[name]
        return name

    order = sorted(range(len(tensors)), key=lambda k: (tensors[k].min_eo, k))
    for k in order:
        t = tensors[k]
        rel = t.spatial
        if rel.kind not in (SpatialKind.MV, SpatialKind.RV, SpatialKind.E):
            continue
        if rel.target not in by_name:
            raise PlanningError(f"view target '{rel.target}' of '{t.name}' does not exist")
        root = find(rel.target)
        if rel.kind is SpatialKind.MV and t.min_eo < group_max[root]:
            logger.debug(
                f"{t.name}: MV({rel.target}) needs min EO {t.min_eo} >= {group_max[root]}, "
                "downgraded to C"
            )
            final[t.name] = SpatialRelation.create()
            continue
        if by_name[t.name].dim.element_count != by_name[root].dim.element_count:
            raise PlanningError(f"cannot alias '{t.name}' onto '{root}': sizes differ")
        parent[find(t.name)] = root
        group_max[root] = max(group_max[root], group_max[t.name])

    groups: Dict[str, List[TensorSpec]] = {}
    for t in tensors:
        groups.setdefault(find(t.name), []).append(replace(t, spatial=final[t.name]))

    merged: List[TensorSpec] = []
    for root_name, members in groups.items():
        root = members[0] if members[0].name == root_name else by_name[root_name]
        root = replace(root, spatial=final[root_name])
        aliases = tuple(m for m in members if m.name != root_name)
        if not aliases:
            merged.append(root)
            continue
        eos = sorted({eo for m in members for eo in m.eos})
        writes = sorted({eo for m in members for eo in m.write_eos})
        temporal = frozenset().union(*(m.temporal for m in members))
        spans = [m.span for m in members if m.span is not None]
        span = (min(s[0] for s in spans), max(s[1] for s in spans)) if spans else None
        merged.append(
            replace(
                root,
                eos=tuple(eos),
                write_eos=tuple(writes),
                temporal=temporal,
                span=span,
                aliases=aliases,
            )
        )
        logger.debug(f"Merged {[m.name for m in members]} -> {root_name} eos={eos}")
    return merged
