import numpy as np
import pytest

from eotrain.core.blas import (
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
from eotrain.core.exceptions import LifetimeError, ShapeError
from eotrain.core.tensor import Workspace, materialize


def _external(model):
    return {
        name: np.zeros(model.spec(name).dim.shape, dtype=np.float32) for name in ("X0", "Y")
    }


def _byte_offset(view, arena):
    return view.__array_interface__["data"][0] - arena.data.__array_interface__["data"][0]


def test_arena_views_follow_the_plan(compiled):
    model = compiled("three_linear", merge=False)
    arena, resolver = materialize(model.memory, model.merged, _external(model))
    assert arena.nbytes == model.memory.pool_bytes
    assert resolver.view("W1").shape == (1, 1, 8, 8)
    assert _byte_offset(resolver.view("dW2"), arena) == 1280
    assert np.shares_memory(resolver.view("X3"), resolver.view("D3"))
    assert not np.shares_memory(resolver.view("X1"), resolver.view("X2"))


def test_merged_aliases_share_storage(compiled):
    model = compiled("lin_sig_flat")
    _, resolver = materialize(model.memory, model.merged, _external(model))
    x1, x3 = resolver.view("X1"), resolver.view("X3")
    x1[...] = 3.0
    assert np.all(x3 == 3.0)
    assert x3.shape == (4, 1, 1, 8)


def test_resolver_enforces_lifetimes(compiled):
    model = compiled("three_linear", merge=False)
    _, resolver = materialize(model.memory, model.merged, _external(model))
    resolver.view("X3", eo=2)
    with pytest.raises(LifetimeError):
        resolver.view("X3", eo=5)
    with pytest.raises(LifetimeError):
        resolver.view("nope")
    resolver.view("W0", eo=11)


def test_placeholders_need_caller_buffers(compiled):
    model = compiled("three_linear")
    with pytest.raises(LifetimeError):
        materialize(model.memory, model.merged, {"X0": np.zeros((4, 1, 1, 8), np.float32)})
    external = _external(model)
    _, resolver = materialize(model.memory, model.merged, external)
    assert np.shares_memory(resolver.view("X0"), external["X0"])
    with pytest.raises(ShapeError):
        resolver.bind_external("Y", np.zeros(3, np.float32))


def test_poison_fills_group_with_nan(compiled):
    model = compiled("three_linear")
    arena, resolver = materialize(model.memory, model.merged, _external(model))
    arena.poison("X2")
    assert np.isnan(resolver.view("X2")).all()
    assert not np.isnan(resolver.view("W0")).any()


def test_workspace_reuses_buffers():
    workspace = Workspace()
    first = workspace.get("cols", (2, 3))
    assert workspace.get("cols", (2, 3)) is first
    workspace.get("cols", (3, 2))
    assert workspace.allocations == 2
    assert workspace.nbytes == 2 * 6 * 4


def test_gemm_transposes_and_checks_shapes():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
    out = np.empty((3, 5))
    np.testing.assert_allclose(gemm(a, b, out, trans_b=True), a @ b.T)
    out = np.empty((4, 4))
    np.testing.assert_allclose(gemm(a, a, out, trans_a=True), a.T @ a)
    with pytest.raises(ShapeError):
        gemm(a, b, np.empty((3, 5)))
    with pytest.raises(ShapeError):
        gemm(a, b, np.empty((3, 4)), trans_b=True)


def test_axpy_and_reduction():
    x, y = np.arange(4.0), np.ones(4)
    axpy(0.5, x, y)
    np.testing.assert_allclose(y, [1.0, 1.5, 2.0, 2.5])
    before = y.copy()
    axpy(0.0, x, y)
    np.testing.assert_array_equal(y, before)
    with pytest.raises(ShapeError):
        axpy(1.0, x, np.ones(3))
    grid = np.arange(24.0).reshape(2, 3, 4)
    out = np.empty(3)
    np.testing.assert_allclose(reduce_sum_batch(grid, out, axes=(0, 2)), grid.sum(axis=(0, 2)))


def _naive_im2col(x, kernel, stride, pad):
    b, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = conv_out_size(h, kernel, stride, pad), conv_out_size(w, kernel, stride, pad)
    cols = np.zeros((b, c * kernel * kernel, oh * ow))
    for n in range(b):
        for ch in range(c):
            for ky in range(kernel):
                for kx in range(kernel):
                    row = (ch * kernel + ky) * kernel + kx
                    for oy in range(oh):
                        for ox in range(ow):
                            cols[n, row, oy * ow + ox] = padded[
                                n, ch, oy * stride + ky, ox * stride + kx
                            ]
    return cols


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_im2col_matches_naive_unfold(stride, pad):
    x = np.random.default_rng(1).normal(size=(2, 3, 6, 6))
    oh = conv_out_size(6, 3, stride, pad)
    out = np.empty((2, 27, oh * oh))
    np.testing.assert_allclose(im2col(x, 3, stride, pad, out), _naive_im2col(x, 3, stride, pad))


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
def test_col2im_is_the_adjoint_of_im2col(stride, pad):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 3, 6, 6))
    oh = conv_out_size(6, 3, stride, pad)
    cols = rng.normal(size=(2, 27, oh * oh))
    unfolded = im2col(x, 3, stride, pad, np.empty_like(cols))
    folded = col2im(cols, 3, stride, pad, np.empty_like(x))
    assert np.vdot(unfolded, cols) == pytest.approx(np.vdot(x, folded), rel=1e-10)


def test_im2col_rejects_oversized_kernel():
    with pytest.raises(ShapeError):
        im2col(np.zeros((1, 1, 2, 2)), 3, 1, 0, np.empty((1, 9, 1)))


def test_in_place_elementwise_helpers():
    x = np.array([[0.0, 1.0], [2.0, 3.0]])
    np.testing.assert_allclose(elementwise(np.exp, x, np.empty(4)), np.exp(x))
    y = x.copy()
    elementwise(np.negative, y, y)
    np.testing.assert_array_equal(y, -x)
    with pytest.raises(ShapeError):
        elementwise(np.exp, x, np.empty(3))

    np.testing.assert_array_equal(multiply(x, x, np.empty(4)), x * x)
    with pytest.raises(ShapeError):
        multiply(x, x.reshape(4), np.empty(4))
    assert scale(0.5, x) is x
    np.testing.assert_array_equal(x, [[0.0, 0.5], [1.0, 1.5]])
