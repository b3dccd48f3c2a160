# eotrain/core/blas.py

"""
Dense math primitives used by the layer kernels.

Every primitive writes into a caller-provided `out` buffer so the training path does
not allocate. Operands may be any floating dtype; the runtime passes float32.
"""

from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .exceptions import ShapeError


def _expect(array: np.ndarray, shape: Tuple[int, ...], what: str) -> None:
    if tuple(array.shape) != tuple(shape):
        raise ShapeError(f"{what}: expected shape {tuple(shape)}, got {tuple(array.shape)}")


def gemm(
    a: np.ndarray,
    b: np.ndarray,
    out: np.ndarray,
    trans_a: bool = False,
    trans_b: bool = False,
) -> np.ndarray:
    """out = op(a) @ op(b) for 2-D operands."""
    lhs = a.T if trans_a else a
    rhs = b.T if trans_b else b
    if lhs.ndim != 2 or rhs.ndim != 2 or lhs.shape[1] != rhs.shape[0]:
        raise ShapeError(f"gemm: cannot multiply {lhs.shape} by {rhs.shape}")
    _expect(out, (lhs.shape[0], rhs.shape[1]), "gemm output")
    return np.matmul(lhs, rhs, out=out)


def axpy(
    alpha: float, x: np.ndarray, y: np.ndarray, tmp: Optional[np.ndarray] = None
) -> np.ndarray:
    """y += alpha * x. `tmp` (same shape as x) avoids a temporary."""
    if x.shape != y.shape:
        raise ShapeError(f"axpy: x {x.shape} and y {y.shape} differ")
    if alpha == 0.0:
        return y
    if tmp is None:
        tmp = np.empty_like(x)
    _expect(tmp, x.shape, "axpy scratch")
    np.multiply(x, alpha, out=tmp)
    return np.add(y, tmp, out=y)


def scale(alpha: float, x: np.ndarray) -> np.ndarray:
    """x *= alpha in place."""
    return np.multiply(x, alpha, out=x)


def elementwise(fn: Callable[..., np.ndarray], x: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Apply a unary ufunc-like `fn(x, out=out)`; `out` may alias `x`."""
    if x.size != out.size:
        raise ShapeError(f"elementwise: {x.shape} and {out.shape} differ in size")
    return fn(x, out=out.reshape(x.shape))


def multiply(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> np.ndarray:
    if a.shape != b.shape or a.size != out.size:
        raise ShapeError(f"multiply: {a.shape}, {b.shape} -> {out.shape}")
    return np.multiply(a, b, out=out.reshape(a.shape))


def reduce_sum_batch(x: np.ndarray, out: np.ndarray, axes: Sequence[int] = (0,)) -> np.ndarray:
    """Sum over the batch axis (and any extra `axes`) into `out`."""
    kept = tuple(n for k, n in enumerate(x.shape) if k not in axes)
    if out.size != int(np.prod(kept)):
        raise ShapeError(f"reduce_sum_batch: {x.shape} over {tuple(axes)} into {out.shape}")
    return np.sum(x, axis=tuple(axes), out=out.reshape(kept))


def conv_out_size(size: int, kernel: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - kernel) // stride + 1


def im2col(
    x: np.ndarray,
    kernel: int,
    stride: int,
    pad: int,
    out: np.ndarray,
    padded: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Unfold (B, C, H, W) into patch columns (B, C*k*k, OH*OW).

    Rows are ordered channel-major then kernel row then kernel column, matching a
    (F, C, k, k) weight reshaped to (F, C*k*k). `padded` is a zero-bordered
    (B, C, H+2p, W+2p) scratch buffer; only its interior is written.
    """
    b, c, h, w = x.shape
    oh, ow = conv_out_size(h, kernel, stride, pad), conv_out_size(w, kernel, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"im2col: kernel {kernel} does not fit {h}x{w} with pad {pad}")
    _expect(out, (b, c * kernel * kernel, oh * ow), "im2col output")
    src = x
    if pad:
        if padded is None:
            padded = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        _expect(padded, (b, c, h + 2 * pad, w + 2 * pad), "im2col padding scratch")
        np.copyto(padded[:, :, pad : pad + h, pad : pad + w], x)
        src = padded
    sb, sc, sh, sw = src.strides
    patches = as_strided(
        src,
        shape=(b, c, kernel, kernel, oh, ow),
        strides=(sb, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    np.copyto(out.reshape(b, c, kernel, kernel, oh, ow), patches)
    return out


def col2im(
    cols: np.ndarray,
    kernel: int,
    stride: int,
    pad: int,
    out: np.ndarray,
    padded: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Scatter-add patch columns back onto a (B, C, H, W) image; inverse layout of im2col."""
    b, c, h, w = out.shape
    oh, ow = conv_out_size(h, kernel, stride, pad), conv_out_size(w, kernel, stride, pad)
    _expect(cols, (b, c * kernel * kernel, oh * ow), "col2im input")
    target = out
    if pad:
        if padded is None:
            padded = np.empty((b, c, h + 2 * pad, w + 2 * pad), dtype=out.dtype)
        _expect(padded, (b, c, h + 2 * pad, w + 2 * pad), "col2im padding scratch")
        target = padded
    target.fill(0)
    grid = cols.reshape(b, c, kernel, kernel, oh, ow)
    for ky in range(kernel):
        for kx in range(kernel):
            rows = slice(ky, ky + stride * oh, stride)
            columns = slice(kx, kx + stride * ow, stride)
            target[:, :, rows, columns] += grid[:, :, ky, kx]
    if pad:
        np.copyto(out, padded[:, :, pad : pad + h, pad : pad + w])
    return out
