# eotrain/core/oracle.py

"""
Reference trainer used to check the planned runtime.

Plain float64 reverse-mode math over the realized layer list: a fresh array per
tensor, no execution orders, no merging, no in-place layers, no swap. Convolution is
computed as a sum over kernel offsets rather than through im2col.
"""

import logging
import math
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .exceptions import DivergenceError
from .graph import LayerKind, LayerNode, ModelGraph, conv_output_size, infer_shapes, realize
from .layers import initial_weights
from .models import Conv2DProps

logger = logging.getLogger("eotrain.oracle")

Weights = Dict[str, np.ndarray]


def _conv_pad(node: LayerNode, height: int) -> Tuple[Conv2DProps, int]:
    props = node.props()
    assert isinstance(props, Conv2DProps)
    _, pad = conv_output_size(height, props.kernel, props.stride, props.padding)
    return props, pad


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int, out_hw) -> np.ndarray:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = out_hw
    out = np.zeros((x.shape[0], w.shape[0], oh, ow))
    for ky in range(w.shape[2]):
        for kx in range(w.shape[3]):
            window = xp[:, :, ky : ky + stride * oh : stride, kx : kx + stride * ow : stride]
            out += np.einsum("bchw,fc->bfhw", window, w[:, :, ky, kx])
    return out


def _conv_backward(
    x: np.ndarray, w: np.ndarray, d: np.ndarray, stride: int, pad: int
) -> Tuple[np.ndarray, np.ndarray]:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    oh, ow = d.shape[2], d.shape[3]
    for ky in range(w.shape[2]):
        for kx in range(w.shape[3]):
            rows = slice(ky, ky + stride * oh, stride)
            cols = slice(kx, kx + stride * ow, stride)
            dw[:, :, ky, kx] = np.einsum("bfhw,bchw->fc", d, xp[:, :, rows, cols])
            dxp[:, :, rows, cols] += np.einsum("bfhw,fc->bchw", d, w[:, :, ky, kx])
    h, width = x.shape[2], x.shape[3]
    return dw, dxp[:, :, pad : pad + h, pad : pad + width]


def oracle_gradients(
    graph: ModelGraph, weights: Mapping[str, np.ndarray], x: np.ndarray, y: np.ndarray
) -> Tuple[float, Weights]:
    """Loss and gradients of every weight for one batch.

    Args:
        graph: Parsed or realized model graph
        weights: W{i}/b{i} arrays keyed like the runtime
        x: Input batch
        y: Label batch

    Returns:
        (MSE loss, dict of dW{i}/db{i} in float64). Frozen layers get no entry.
    """
    graph = realize(graph)
    shapes = infer_shapes(graph)
    layers = graph.compute_layers
    w64 = {name: np.asarray(a, dtype=np.float64) for name, a in weights.items()}

    in_dim = shapes[layers[0].id][0]
    acts: List[np.ndarray] = [np.asarray(x, dtype=np.float64).reshape(in_dim.shape)]
    for i, node in enumerate(layers):
        a = acts[-1]
        out_dim = shapes[node.id][1]
        if node.kind is LayerKind.LINEAR:
            z = a.reshape(a.shape[0], -1) @ w64[f"W{i}"].reshape(-1, out_dim.width)
            if f"b{i}" in w64:
                z = z + w64[f"b{i}"].reshape(1, -1)
        elif node.kind is LayerKind.CONV2D:
            props, pad = _conv_pad(node, a.shape[2])
            out_hw = (out_dim.height, out_dim.width)
            z = _conv_forward(a, w64[f"W{i}"], props.stride, pad, out_hw)
            if f"b{i}" in w64:
                z = z + w64[f"b{i}"].reshape(1, -1, 1, 1)
        elif node.kind is LayerKind.SIGMOID:
            with np.errstate(over="ignore"):
                z = 1.0 / (1.0 + np.exp(-a))
        elif node.kind is LayerKind.RELU:
            z = np.maximum(a, 0.0)
        else:
            z = a
        acts.append(np.asarray(z).reshape(out_dim.shape))

    prediction = acts[-1]
    residual = prediction - np.asarray(y, dtype=np.float64).reshape(prediction.shape)
    loss = float(np.mean(residual**2))
    d = 2.0 * residual / residual.size

    grads: Weights = {}
    for i in range(len(layers) - 1, -1, -1):
        node, a, out = layers[i], acts[i], acts[i + 1]
        if node.kind is LayerKind.LINEAR:
            x2, d2 = a.reshape(a.shape[0], -1), d.reshape(d.shape[0], -1)
            w2 = w64[f"W{i}"].reshape(x2.shape[1], d2.shape[1])
            if node.trainable:
                grads[f"dW{i}"] = (x2.T @ d2).reshape(w64[f"W{i}"].shape)
                if f"b{i}" in w64:
                    grads[f"db{i}"] = d2.sum(axis=0).reshape(w64[f"b{i}"].shape)
            d = (d2 @ w2.T).reshape(a.shape)
        elif node.kind is LayerKind.CONV2D:
            props, pad = _conv_pad(node, a.shape[2])
            dw, dx = _conv_backward(a, w64[f"W{i}"], d, props.stride, pad)
            if node.trainable:
                grads[f"dW{i}"] = dw
                if f"b{i}" in w64:
                    grads[f"db{i}"] = d.sum(axis=(0, 2, 3)).reshape(w64[f"b{i}"].shape)
            d = dx
        elif node.kind is LayerKind.SIGMOID:
            d = d * out * (1.0 - out)
        elif node.kind is LayerKind.RELU:
            d = d * (a > 0.0)
        else:
            d = d.reshape(a.shape)
    return loss, grads


def reference_oracle(
    graph: ModelGraph,
    batches: Iterable[Tuple[np.ndarray, np.ndarray]],
    steps: Optional[int] = None,
    seed: Optional[int] = None,
    initial: Optional[Mapping[str, np.ndarray]] = None,
) -> Tuple[Weights, List[float]]:
    """Train with textbook SGD and return the final weights and per-step losses.

    Args:
        graph: Model to train
        batches: (input, label) batches in training order
        steps: Stop after this many batches (default: all of them)
        seed: Seed for the initial weights (default: the model's seed)
        initial: Explicit initial weights, overriding `seed`

    Raises:
        DivergenceError: Non-finite loss
    """
    graph = realize(graph)
    hyper = graph.hyper
    if initial is None:
        initial = initial_weights(graph, hyper.seed if seed is None else seed)
    weights = {name: np.array(a, dtype=np.float64) for name, a in initial.items()}
    losses: List[float] = []
    for iteration, (x, y) in enumerate(batches):
        if steps is not None and iteration >= steps:
            break
        loss, grads = oracle_gradients(graph, weights, x, y)
        if not math.isfinite(loss):
            raise DivergenceError(iteration, loss)
        losses.append(loss)
        if hyper.clip_grad_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > hyper.clip_grad_norm:
                grads = {k: g * (hyper.clip_grad_norm / norm) for k, g in grads.items()}
        for name, grad in grads.items():
            param = name[1:]
            weights[param] = weights[param] - hyper.learning_rate * grad
    logger.debug(f"Oracle ran {len(losses)} steps")
    return weights, losses
