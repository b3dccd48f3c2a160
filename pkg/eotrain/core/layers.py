# eotrain/core/layers.py

"""
eotrain layer kernels

Low-level procedures (plain functions over numpy buffers) plus one kernel class per
layer kind that wires them to the tensors of its LayerBinding. Kernels never
allocate on the training path; scratch space comes from the Workspace.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Type

import numpy as np

from .blas import (
    axpy,
    col2im,
    conv_out_size,
    elementwise,
    gemm,
    im2col,
    multiply,
    reduce_sum_batch,
    scale,
)
from .constants import DTYPE
from .exec_order import LayerBinding, LossBinding, ProcKind, parameter_dims
from .graph import LayerKind, ModelGraph, conv_output_size, infer_shapes
from .models import Conv2DProps
from .seed import make_rng
from .tensor import Resolver, Workspace

logger = logging.getLogger("eotrain.layers")


# ---------------------------------------------------------------------------
# procedures


def _rows(array: np.ndarray) -> np.ndarray:
    return array.reshape(array.shape[0], -1)


def _matrix(weight: np.ndarray) -> np.ndarray:
    return weight.reshape(weight.shape[-2], weight.shape[-1])


def linear_forward(
    x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray], out: np.ndarray
) -> np.ndarray:
    """out = x @ W + b with x viewed as (B, K) and W as (K, U)."""
    y = _rows(out)
    gemm(_rows(x), _matrix(w), y)
    if b is not None:
        np.add(y, b.reshape(1, -1), out=y)
    return out


def linear_gradient(
    x: np.ndarray, d: np.ndarray, dw: np.ndarray, db: Optional[np.ndarray]
) -> None:
    gemm(_rows(x), _rows(d), _matrix(dw), trans_a=True)
    if db is not None:
        reduce_sum_batch(_rows(d), db, axes=(0,))


def linear_derivative(d: np.ndarray, w: np.ndarray, out: np.ndarray) -> np.ndarray:
    gemm(_rows(d), _matrix(w), _rows(out), trans_b=True)
    return out


@dataclass(frozen=True)
class ConvGeometry:
    kernel: int
    stride: int = 1
    pad: int = 0


def _conv_dims(x_shape: Sequence[int], w: np.ndarray, geometry: ConvGeometry):
    b, c, h, width = x_shape
    k, s, p = geometry.kernel, geometry.stride, geometry.pad
    positions = conv_out_size(h, k, s, p) * conv_out_size(width, k, s, p)
    return b, w.shape[0], c * k * k, positions


def _cols(
    x: np.ndarray, geometry: ConvGeometry, workspace: Workspace, patches: int
) -> np.ndarray:
    b, c, h, w = x.shape
    k, s, p = geometry.kernel, geometry.stride, geometry.pad
    cols = workspace.get("conv/cols", (b, c * k * k, patches))
    padded = workspace.get("conv/im2col_pad", (b, c, h + 2 * p, w + 2 * p)) if p else None
    return im2col(x, k, s, p, cols, padded)


def conv2d_forward(
    x: np.ndarray,
    w: np.ndarray,
    b: Optional[np.ndarray],
    out: np.ndarray,
    geometry: ConvGeometry,
    workspace: Workspace,
) -> np.ndarray:
    """im2col + gemm cross-correlation; W is (F, C, k, k), b is F elements."""
    batch, filters, ckk, patches = _conv_dims(x.shape, w, geometry)
    cols = _cols(x, geometry, workspace, patches)
    y = out.reshape(batch, filters, patches)
    np.matmul(w.reshape(filters, ckk), cols, out=y)
    if b is not None:
        np.add(y, b.reshape(1, filters, 1), out=y)
    return out


def conv2d_gradient(
    x: np.ndarray,
    d: np.ndarray,
    dw: np.ndarray,
    db: Optional[np.ndarray],
    geometry: ConvGeometry,
    workspace: Workspace,
) -> None:
    batch, filters, ckk, patches = _conv_dims(x.shape, dw, geometry)
    cols = _cols(x, geometry, workspace, patches)
    grads = d.reshape(batch, filters, patches)
    dw2 = dw.reshape(filters, ckk)
    partial = workspace.get("conv/dw", (filters, ckk))
    dw2.fill(0)
    # fixed batch order keeps the reduction deterministic
    for i in range(batch):
        np.matmul(grads[i], cols[i].T, out=partial)
        np.add(dw2, partial, out=dw2)
    if db is not None:
        reduce_sum_batch(grads, db, axes=(0, 2))


def conv2d_derivative(
    d: np.ndarray, w: np.ndarray, out: np.ndarray, geometry: ConvGeometry, workspace: Workspace
) -> np.ndarray:
    batch, channels, h, width = out.shape
    _, filters, ckk, patches = _conv_dims(out.shape, w, geometry)
    k, s, p = geometry.kernel, geometry.stride, geometry.pad
    cols = workspace.get("conv/cols", (batch, ckk, patches))
    np.matmul(w.reshape(filters, ckk).T, d.reshape(batch, filters, patches), out=cols)
    padded = workspace.get("conv/col2im_pad", (batch, channels, h + 2 * p, width + 2 * p))
    return col2im(cols, k, s, p, out, padded if p else None)


def sigmoid_forward(x: np.ndarray, out: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-x)); `out` may alias `x`. Large negative inputs saturate to 0."""
    with np.errstate(over="ignore"):
        elementwise(np.negative, x, out)
        np.exp(out, out=out)
    np.add(out, 1.0, out=out)
    return np.reciprocal(out, out=out)


def sigmoid_derivative(
    d: np.ndarray, y: np.ndarray, out: np.ndarray, tmp: np.ndarray
) -> np.ndarray:
    """d * y * (1 - y) from the stored output y."""
    np.subtract(1.0, y, out=tmp)
    np.multiply(tmp, y, out=tmp)
    return multiply(d, tmp, out)


def relu_forward(x: np.ndarray, out: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0, out=out)


def relu_derivative(d: np.ndarray, y: np.ndarray, out: np.ndarray, tmp: np.ndarray) -> np.ndarray:
    """d where the stored output is positive, 0 elsewhere (also at 0)."""
    np.greater(y, 0.0, out=tmp)
    return multiply(d, tmp, out)


def _same_buffer(a: np.ndarray, b: np.ndarray) -> bool:
    return bool(a.__array_interface__["data"][0] == b.__array_interface__["data"][0])


def copy_view(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Reinterpret `src` with the shape of `dst`; a no-op when both alias one region."""
    if not _same_buffer(src, dst):
        np.copyto(dst.reshape(-1), src.reshape(-1))
    return dst


def mse_forward(x: np.ndarray, y: np.ndarray, residual: np.ndarray) -> float:
    """Write x - y into `residual` and return the mean of its squares."""
    np.subtract(x, y, out=residual)
    flat = residual.reshape(-1)
    return float(np.dot(flat, flat)) / flat.size


def mse_derivative(residual: np.ndarray, out: np.ndarray) -> np.ndarray:
    return np.multiply(residual, 2.0 / residual.size, out=out)


def sgd_update(
    w: np.ndarray, dw: np.ndarray, learning_rate: float, tmp: Optional[np.ndarray] = None
) -> np.ndarray:
    return axpy(-learning_rate, dw, w, tmp)


def clip_gradients_global_norm(grads: Sequence[np.ndarray], max_norm: float) -> float:
    """Scale every gradient by max_norm / g when the global norm g exceeds max_norm.

    Returns:
        float: Global norm before clipping
    """
    total = 0.0
    for g in grads:
        flat = g.reshape(-1)
        total += float(np.dot(flat, flat))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            scale(factor, g)
        logger.debug(f"Clipped gradients: norm {norm:.6g} -> {max_norm}")
    return norm


def initial_weights(graph: ModelGraph, seed: int, dtype: str = DTYPE) -> Dict[str, np.ndarray]:
    """Xavier-uniform weights and zero biases for every weighted layer of a realized graph.

    Layers are visited in chain order from one generator, so the same seed always
    produces the same arrays.
    """
    rng = make_rng(seed, "weights")
    shapes = infer_shapes(graph)
    weights: Dict[str, np.ndarray] = {}
    for i, node in enumerate(graph.compute_layers):
        if not node.has_weights:
            continue
        weight_dim, bias_dim = parameter_dims(node, shapes[node.id][0])
        if node.kind is LayerKind.CONV2D:
            area = weight_dim.height * weight_dim.width
            fan_in, fan_out = weight_dim.channel * area, weight_dim.batch * area
        else:
            fan_in, fan_out = weight_dim.height, weight_dim.width
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights[f"W{i}"] = rng.uniform(-limit, limit, size=weight_dim.shape).astype(dtype)
        if bias_dim is not None:
            weights[f"b{i}"] = np.zeros(bias_dim.shape, dtype=dtype)
    return weights


# ---------------------------------------------------------------------------
# kernels


@dataclass
class StepContext:
    resolver: Resolver
    workspace: Workspace
    learning_rate: float
    eo: int = 0

    def view(self, name: str) -> np.ndarray:
        return self.resolver.view(name, self.eo)


class LayerKernel:
    """The four procedures of one compute layer.

    `run` skips procedures the binding has no tensors for: CG and AG without a
    gradient, CD without an outgoing derivative.
    """

    def __init__(self, binding: LayerBinding):
        self.binding = binding

    def run(self, proc: ProcKind, ctx: StepContext) -> None:
        b = self.binding
        if proc is ProcKind.F:
            self.forward(ctx)
        elif proc is ProcKind.CG and b.computes_gradient:
            self.compute_gradient(ctx)
        elif proc is ProcKind.CD and b.computes_derivative:
            self.compute_derivative(ctx)
        elif proc is ProcKind.AG and b.computes_gradient:
            self.apply_gradient(ctx)

    def forward(self, ctx: StepContext) -> None:
        raise NotImplementedError

    def compute_gradient(self, ctx: StepContext) -> None:
        pass

    def compute_derivative(self, ctx: StepContext) -> None:
        raise NotImplementedError

    def apply_gradient(self, ctx: StepContext) -> None:
        b = self.binding
        for param, grad in ((b.weight, b.weight_grad), (b.bias, b.bias_grad)):
            if param is None or grad is None:
                continue
            dw = ctx.view(grad)
            sgd_update(ctx.view(param), dw, ctx.learning_rate, ctx.workspace.get("sgd", dw.shape))


class LinearKernel(LayerKernel):
    def _bias(self, ctx: StepContext) -> Optional[np.ndarray]:
        return ctx.view(self.binding.bias) if self.binding.bias else None

    def forward(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.weight is not None
        linear_forward(ctx.view(b.input), ctx.view(b.weight), self._bias(ctx), ctx.view(b.output))

    def compute_gradient(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.weight_grad is not None and b.incoming_derivative is not None
        db = ctx.view(b.bias_grad) if b.bias_grad else None
        linear_gradient(
            ctx.view(b.input), ctx.view(b.incoming_derivative), ctx.view(b.weight_grad), db
        )

    def compute_derivative(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.weight and b.incoming_derivative and b.outgoing_derivative
        linear_derivative(
            ctx.view(b.incoming_derivative), ctx.view(b.weight), ctx.view(b.outgoing_derivative)
        )


class Conv2DKernel(LayerKernel):
    def __init__(self, binding: LayerBinding):
        super().__init__(binding)
        props = binding.node.props()
        assert isinstance(props, Conv2DProps)
        _, pad = conv_output_size(binding.in_dim.height, props.kernel, props.stride, props.padding)
        self.geometry = ConvGeometry(props.kernel, props.stride, pad)

    def forward(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.weight is not None
        bias = ctx.view(b.bias) if b.bias else None
        conv2d_forward(
            ctx.view(b.input),
            ctx.view(b.weight),
            bias,
            ctx.view(b.output),
            self.geometry,
            ctx.workspace,
        )

    def compute_gradient(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.weight_grad is not None and b.incoming_derivative is not None
        db = ctx.view(b.bias_grad) if b.bias_grad else None
        conv2d_gradient(
            ctx.view(b.input),
            ctx.view(b.incoming_derivative),
            ctx.view(b.weight_grad),
            db,
            self.geometry,
            ctx.workspace,
        )

    def compute_derivative(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.weight and b.incoming_derivative and b.outgoing_derivative
        conv2d_derivative(
            ctx.view(b.incoming_derivative),
            ctx.view(b.weight),
            ctx.view(b.outgoing_derivative),
            self.geometry,
            ctx.workspace,
        )


class SigmoidKernel(LayerKernel):
    def forward(self, ctx: StepContext) -> None:
        sigmoid_forward(ctx.view(self.binding.input), ctx.view(self.binding.output))

    def compute_derivative(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.incoming_derivative and b.outgoing_derivative
        y = ctx.view(b.output)
        sigmoid_derivative(
            ctx.view(b.incoming_derivative),
            y,
            ctx.view(b.outgoing_derivative),
            ctx.workspace.get("activation", y.shape),
        )


class ReluKernel(LayerKernel):
    def forward(self, ctx: StepContext) -> None:
        relu_forward(ctx.view(self.binding.input), ctx.view(self.binding.output))

    def compute_derivative(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.incoming_derivative and b.outgoing_derivative
        y = ctx.view(b.output)
        relu_derivative(
            ctx.view(b.incoming_derivative),
            y,
            ctx.view(b.outgoing_derivative),
            ctx.workspace.get("activation", y.shape),
        )


class ViewKernel(LayerKernel):
    """flatten and reshape"""

    def forward(self, ctx: StepContext) -> None:
        copy_view(ctx.view(self.binding.input), ctx.view(self.binding.output))

    def compute_derivative(self, ctx: StepContext) -> None:
        b = self.binding
        assert b.incoming_derivative and b.outgoing_derivative
        copy_view(ctx.view(b.incoming_derivative), ctx.view(b.outgoing_derivative))


class MseLossKernel:
    def __init__(self, binding: LossBinding):
        self.binding = binding

    def forward(self, ctx: StepContext) -> float:
        b = self.binding
        return mse_forward(ctx.view(b.prediction), ctx.view(b.label), ctx.view(b.residual))

    def compute_derivative(self, ctx: StepContext) -> None:
        b = self.binding
        if b.derivative is not None:
            mse_derivative(ctx.view(b.residual), ctx.view(b.derivative))


_KERNELS: Dict[LayerKind, Type[LayerKernel]] = {
    LayerKind.LINEAR: LinearKernel,
    LayerKind.CONV2D: Conv2DKernel,
    LayerKind.SIGMOID: SigmoidKernel,
    LayerKind.RELU: ReluKernel,
    LayerKind.FLATTEN: ViewKernel,
    LayerKind.RESHAPE: ViewKernel,
}


def make_kernel(binding: LayerBinding) -> LayerKernel:
    return _KERNELS[binding.node.kind](binding)
