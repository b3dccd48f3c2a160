# eotrain/core/graph.py

"""
eotrain graph module

Parses INI-like model descriptions into a ModelGraph, lowers the parsed graph through
the realizer passes (Input, Activation, Flatten, Loss) and propagates Dim4 shapes
along the resulting chain.
"""

import configparser
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Tuple, Type

from pydantic import TypeAdapter, ValidationError

from .exceptions import (
    MissingPropertyError,
    ModelSyntaxError,
    RealizeError,
    ShapeError,
    UnknownLayerKindError,
    UnknownPropertyError,
)
from .models import (
    ActivationProps,
    Conv2DProps,
    FlattenProps,
    InputProps,
    LayerProps,
    LinearProps,
    ModelHyper,
    MseProps,
    ReshapeProps,
)

logger = logging.getLogger("eotrain.graph")

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*$")
_BOOL = TypeAdapter(bool)


@dataclass(frozen=True)
class Dim4:
    """Tensor dimensions in elements, serialized B:C:H:W."""

    batch: int
    channel: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("batch", "channel", "height", "width"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ShapeError(f"Dim4.{name} must be a positive integer, got {value!r}")

    @property
    def element_count(self) -> int:
        return self.batch * self.channel * self.height * self.width

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return (self.batch, self.channel, self.height, self.width)

    @property
    def feature_count(self) -> int:
        """Elements per batch item."""
        return self.channel * self.height * self.width

    def with_batch(self, batch: int) -> "Dim4":
        return Dim4(batch, self.channel, self.height, self.width)

    def __str__(self) -> str:
        return f"{self.batch}:{self.channel}:{self.height}:{self.width}"

    @classmethod
    def parse(cls, text: str, batch: Optional[int] = None) -> "Dim4":
        """Parse `C:H:W` (batch taken from the argument) or `B:C:H:W`."""
        try:
            parts = [int(p) for p in str(text).strip().split(":")]
        except ValueError as e:
            raise ShapeError(f"invalid dimension string '{text}'") from e
        if len(parts) == 3 and batch is not None:
            return cls(batch, *parts)
        if len(parts) == 4:
            return cls(*parts)
        raise ShapeError(f"dimension string '{text}' must be C:H:W or B:C:H:W")


class LayerKind(str, Enum):
    INPUT = "input"
    LINEAR = "linear"
    CONV2D = "conv2d"
    SIGMOID = "sigmoid"
    RELU = "relu"
    FLATTEN = "flatten"
    RESHAPE = "reshape"
    MSE_LOSS = "mse_loss"


class InplaceClass(str, Enum):
    NONE = "none"
    MODIFY_VIEW = "modify_view"
    READ_ONLY_VIEW = "read_only_view"


# `type=` spellings accepted in model files
_TYPE_NAMES: Dict[str, LayerKind] = {
    "input": LayerKind.INPUT,
    "linear": LayerKind.LINEAR,
    "fully_connected": LayerKind.LINEAR,
    "conv2d": LayerKind.CONV2D,
    "sigmoid": LayerKind.SIGMOID,
    "relu": LayerKind.RELU,
    "flatten": LayerKind.FLATTEN,
    "reshape": LayerKind.RESHAPE,
    "mse": LayerKind.MSE_LOSS,
    "mse_loss": LayerKind.MSE_LOSS,
}

_PROPS: Dict[LayerKind, Type[LayerProps]] = {
    LayerKind.INPUT: InputProps,
    LayerKind.LINEAR: LinearProps,
    LayerKind.CONV2D: Conv2DProps,
    LayerKind.SIGMOID: ActivationProps,
    LayerKind.RELU: ActivationProps,
    LayerKind.FLATTEN: FlattenProps,
    LayerKind.RESHAPE: ReshapeProps,
    LayerKind.MSE_LOSS: MseProps,
}

_INPLACE: Dict[LayerKind, InplaceClass] = {
    LayerKind.SIGMOID: InplaceClass.MODIFY_VIEW,
    LayerKind.RELU: InplaceClass.MODIFY_VIEW,
    LayerKind.FLATTEN: InplaceClass.READ_ONLY_VIEW,
    LayerKind.RESHAPE: InplaceClass.READ_ONLY_VIEW,
}

WEIGHTED_KINDS = frozenset({LayerKind.LINEAR, LayerKind.CONV2D})


@dataclass(frozen=True)
class LayerNode:
    """One layer of the chain.

    `trainable` marks layers that take part in backpropagation with their own
    CG/CD/AG slots. Weightless layers keep it true; only layers with weights can
    be frozen.
    """

    id: str
    kind: LayerKind
    properties: Dict[str, str] = field(default_factory=dict)
    trainable: bool = False
    inplace_class: InplaceClass = InplaceClass.NONE
    lineno: Optional[int] = field(default=None, compare=False)

    @property
    def has_weights(self) -> bool:
        return self.kind in WEIGHTED_KINDS

    @property
    def is_compute(self) -> bool:
        return self.kind not in (LayerKind.INPUT, LayerKind.MSE_LOSS)

    @property
    def is_frozen(self) -> bool:
        return self.has_weights and not self.trainable

    def props(self) -> LayerProps:
        """Typed view of the string properties."""
        try:
            return _PROPS[self.kind].model_validate(self.properties)
        except ValidationError as e:
            raise ModelSyntaxError(
                f"Configuration validation failed for layer '{self.id}': {e}", self.lineno
            ) from e


def make_node(
    node_id: str, kind: LayerKind, properties: Dict[str, str], lineno: Optional[int] = None
) -> LayerNode:
    """Build a LayerNode with the kind-derived flags filled in."""
    if kind in WEIGHTED_KINDS:
        try:
            trainable = _BOOL.validate_python(properties.get("trainable", "true"))
        except ValidationError as e:
            raise ModelSyntaxError(
                f"layer '{node_id}': trainable must be true or false", lineno
            ) from e
    else:
        trainable = kind not in (LayerKind.INPUT, LayerKind.MSE_LOSS)
    return LayerNode(
        id=node_id,
        kind=kind,
        properties=dict(properties),
        trainable=trainable,
        inplace_class=_INPLACE.get(kind, InplaceClass.NONE),
        lineno=lineno,
    )


@dataclass(frozen=True)
class ModelGraph:
    """Ordered layer list plus the [model] hyperparameters."""

    layers: Tuple[LayerNode, ...]
    hyper: ModelHyper
    name: str = "model"

    @property
    def compute_layers(self) -> Tuple[LayerNode, ...]:
        return tuple(node for node in self.layers if node.is_compute)

    @property
    def input_node(self) -> LayerNode:
        return self._single(LayerKind.INPUT)

    @property
    def loss_node(self) -> LayerNode:
        return self._single(LayerKind.MSE_LOSS)

    def node(self, node_id: str) -> LayerNode:
        for node in self.layers:
            if node.id == node_id:
                return node
        raise KeyError(node_id)

    def _single(self, kind: LayerKind) -> LayerNode:
        matches = [node for node in self.layers if node.kind is kind]
        if len(matches) != 1:
            raise RealizeError(f"expected exactly one {kind.value} node, found {len(matches)}")
        return matches[0]


def _section_lines(text: str) -> Dict[str, int]:
    lines: Dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        match = _SECTION_RE.match(line)
        if match:
            lines.setdefault(match.group(1).strip(), lineno)
    return lines


def parse_model(text: str, name: str = "model") -> ModelGraph:
    """Parse a model description.

    Args:
        text: INI-like model text with a [model] section and one section per layer
        name: Name recorded on the graph (used in reports)

    Returns:
        ModelGraph: Layers in file order with string properties

    Raises:
        ModelSyntaxError: Empty text, malformed INI, or invalid [model] values
        UnknownLayerKindError: A layer `type` outside the supported set
        MissingPropertyError: A required key such as `units` is absent
        UnknownPropertyError: A key the layer kind does not accept
    """
    if not text or not text.strip():
        raise ModelSyntaxError("empty model description", 1)

    parser = configparser.ConfigParser(
        interpolation=None, delimiters=("=",), strict=True, comment_prefixes=("#", ";")
    )
    parser.optionxform = str  # type: ignore[assignment,method-assign]
    try:
        parser.read_string(text, source=name)
    except configparser.MissingSectionHeaderError as e:
        raise ModelSyntaxError("content before the first section header", e.lineno) from e
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise ModelSyntaxError(str(e).split(":")[-1].strip(), e.lineno) from e
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise ModelSyntaxError("malformed line", lineno) from e

    lines = _section_lines(text)
    if not parser.has_section("model"):
        raise ModelSyntaxError("missing [model] section", 1)
    try:
        hyper = ModelHyper.model_validate(dict(parser["model"]))
    except ValidationError as e:
        raise ModelSyntaxError(f"Configuration validation failed: {e}", lines.get("model")) from e

    layers: List[LayerNode] = []
    for section in parser.sections():
        if section == "model":
            continue
        lineno = lines.get(section)
        values = dict(parser[section])
        type_name = values.pop("type", None)
        if type_name is None:
            raise MissingPropertyError(section, "type")
        kind = _TYPE_NAMES.get(type_name.strip().lower())
        if kind is None:
            raise UnknownLayerKindError(type_name, lineno)
        fields = _PROPS[kind].model_fields
        for key in values:
            if key not in fields:
                raise UnknownPropertyError(section, key)
        for key, info in fields.items():
            if info.is_required() and key not in values:
                raise MissingPropertyError(section, key)
        layers.append(make_node(section, kind, values, lineno))

    logger.debug(f"Parsed model '{name}' with {len(layers)} layer sections")
    return ModelGraph(layers=tuple(layers), hyper=hyper, name=name)


def _unique_id(base: str, taken: set) -> str:
    candidate, n = base, 1
    while candidate in taken:
        candidate = f"{base}_{n}"
        n += 1
    return candidate


def _realize_input(layers: List[LayerNode], hyper: ModelHyper) -> List[LayerNode]:
    inputs = [node for node in layers if node.kind is LayerKind.INPUT]
    if len(inputs) > 1:
        raise RealizeError(f"model has {len(inputs)} input nodes; exactly one is allowed")
    if inputs:
        if layers[0].kind is not LayerKind.INPUT:
            raise RealizeError(f"input node '{inputs[0].id}' must come first")
        declared = inputs[0].properties.get("shape")
        if hyper.input_shape is not None and declared != hyper.input_shape:
            raise RealizeError(
                f"input_shape '{hyper.input_shape}' disagrees with input node shape '{declared}'"
            )
        return layers
    if hyper.input_shape is None:
        raise RealizeError("model has no input node and [model] gives no input_shape")
    node_id = _unique_id("input", {node.id for node in layers})
    logger.debug(f"Input realizer: synthesized '{node_id}' with shape {hyper.input_shape}")
    return [make_node(node_id, LayerKind.INPUT, {"shape": hyper.input_shape})] + layers


def _realize_activation(layers: List[LayerNode]) -> List[LayerNode]:
    realized: List[LayerNode] = []
    for node in layers:
        activation = node.properties.get("activation") if node.has_weights else None
        if activation is None:
            realized.append(node)
            continue
        kind = _TYPE_NAMES.get(activation.strip().lower())
        if kind not in (LayerKind.SIGMOID, LayerKind.RELU):
            raise RealizeError(f"layer '{node.id}': unsupported activation '{activation}'")
        properties = {k: v for k, v in node.properties.items() if k != "activation"}
        realized.append(replace(node, properties=properties))
        realized.append(make_node(f"{node.id}/{kind.value}", kind, {}, node.lineno))
        logger.debug(f"Activation realizer: split {kind.value} out of '{node.id}'")
    return realized


def _realize_flatten(layers: List[LayerNode]) -> List[LayerNode]:
    realized: List[LayerNode] = []
    pending: Optional[Tuple[str, Optional[int]]] = None
    for node in layers:
        # a split-off flatten follows the owner and anything realized from it
        if pending is not None and not node.id.startswith(f"{pending[0]}/"):
            realized.append(make_node(f"{pending[0]}/flatten", LayerKind.FLATTEN, {}, pending[1]))
            pending = None
        if node.has_weights and "flatten" in node.properties:
            try:
                wanted = _BOOL.validate_python(node.properties["flatten"])
            except ValidationError as e:
                raise ModelSyntaxError(
                    f"layer '{node.id}': flatten must be true or false", node.lineno
                ) from e
            properties = {k: v for k, v in node.properties.items() if k != "flatten"}
            node = replace(node, properties=properties)
            if wanted:
                pending = (node.id, node.lineno)
                logger.debug(f"Flatten realizer: split flatten out of '{node.id}'")
        realized.append(node)
    if pending is not None:
        realized.append(make_node(f"{pending[0]}/flatten", LayerKind.FLATTEN, {}, pending[1]))
    return realized


def _realize_loss(layers: List[LayerNode], hyper: ModelHyper) -> List[LayerNode]:
    losses = [node for node in layers if node.kind is LayerKind.MSE_LOSS]
    if len(losses) > 1:
        raise RealizeError(f"model has {len(losses)} loss nodes; exactly one is allowed")
    if losses:
        if layers[-1].kind is not LayerKind.MSE_LOSS:
            raise RealizeError(f"loss node '{losses[0].id}' must come last")
        return layers
    if hyper.loss is None:
        raise RealizeError("model has no loss node and [model] names no loss")
    node_id = _unique_id("loss", {node.id for node in layers})
    logger.debug(f"Loss realizer: synthesized '{node_id}' ({hyper.loss})")
    return layers + [make_node(node_id, LayerKind.MSE_LOSS, {})]


def realize(graph: ModelGraph) -> ModelGraph:
    """Lower a parsed graph into the canonical linear chain.

    Applies the Input, Activation, Flatten and Loss realizers in that order, types
    every node's properties and checks shapes. Realizing an already realized graph
    returns an equal graph.
    """
    layers = list(graph.layers)
    layers = _realize_input(layers, graph.hyper)
    layers = _realize_activation(layers)
    layers = _realize_flatten(layers)
    layers = _realize_loss(layers, graph.hyper)

    ids = [node.id for node in layers]
    if len(set(ids)) != len(ids):
        raise RealizeError(f"duplicate layer ids after realization: {ids}")
    if not any(node.is_compute for node in layers):
        raise RealizeError("model has no compute layers between input and loss")

    realized = replace(graph, layers=tuple(layers))
    for node in realized.layers:
        node.props()
    infer_shapes(realized)
    return realized


def conv_output_size(size: int, kernel: int, stride: int, padding: str) -> Tuple[int, int]:
    """Return (output size, per-side pad) of one spatial axis."""
    if padding == "same":
        if kernel % 2 == 0:
            raise ShapeError(f"same padding needs an odd kernel, got {kernel}")
        pad = (kernel - 1) // 2
    elif padding == "valid":
        pad = 0
    else:
        raise ShapeError(f"unsupported padding '{padding}' (expected same or valid)")
    if size + 2 * pad < kernel:
        raise ShapeError(f"kernel {kernel} does not fit input size {size} with padding {pad}")
    return (size + 2 * pad - kernel) // stride + 1, pad


def _output_dim(node: LayerNode, props: LayerProps, dim: Dim4, batch: int) -> Dim4:
    if isinstance(props, LinearProps):
        if dim.channel != 1 or dim.height != 1:
            raise ShapeError(
                f"linear layer '{node.id}' needs a {dim.batch}:1:1:K input, got {dim}; "
                "flatten the producer first"
            )
        return Dim4(dim.batch, 1, 1, props.units)
    if isinstance(props, Conv2DProps):
        out_h, _ = conv_output_size(dim.height, props.kernel, props.stride, props.padding)
        out_w, _ = conv_output_size(dim.width, props.kernel, props.stride, props.padding)
        return Dim4(dim.batch, props.filters, out_h, out_w)
    if node.kind is LayerKind.FLATTEN:
        return Dim4(dim.batch, 1, 1, dim.feature_count)
    if isinstance(props, ReshapeProps):
        target = Dim4.parse(props.shape, batch)
        if target.element_count != dim.element_count:
            raise ShapeError(
                f"reshape '{node.id}' cannot map {dim} onto {target} (element counts differ)"
            )
        return target
    return dim


def infer_shapes(graph: ModelGraph) -> Dict[str, Tuple[Dim4, Dim4]]:
    """Propagate shapes along a realized chain.

    Returns:
        Dict mapping layer id to its (input, output) Dim4
    """
    batch = graph.hyper.batch_size
    shapes: Dict[str, Tuple[Dim4, Dim4]] = {}
    current: Optional[Dim4] = None
    for node in graph.layers:
        props = node.props()
        if isinstance(props, InputProps):
            current = Dim4.parse(props.shape, batch)
            if current.batch != batch:
                raise ShapeError(f"input batch {current.batch} differs from model batch {batch}")
            shapes[node.id] = (current, current)
            continue
        if current is None:
            raise ShapeError(f"layer '{node.id}' has no producer; the chain needs an input node")
        out = _output_dim(node, props, current, batch)
        shapes[node.id] = (current, out)
        current = out
    return shapes
