import pytest

from eotrain.core.exceptions import (
    MissingPropertyError,
    ModelSyntaxError,
    RealizeError,
    ShapeError,
    UnknownLayerKindError,
    UnknownPropertyError,
)
from eotrain.core.graph import Dim4, LayerKind, infer_shapes, parse_model, realize

EXAMPLE = """
[model]
batch = 64
epochs = 1
learning_rate = 0.001

[in]
type = input
shape = 3:224:224

[conv]
type = conv2d
filters = 3
kernel = 3x3
stride = 2
padding = same

[loss]
type = mse
"""


def test_parse_layers_in_file_order():
    graph = parse_model(EXAMPLE, name="example")
    assert [n.id for n in graph.layers] == ["in", "conv", "loss"]
    assert graph.hyper.batch_size == 64
    assert graph.name == "example"
    assert graph.node("conv").kind is LayerKind.CONV2D
    props = graph.node("conv").props()
    assert (props.filters, props.kernel, props.stride) == (3, 3, 2)


def test_parse_errors():
    with pytest.raises(ModelSyntaxError):
        parse_model("   \n")
    with pytest.raises(ModelSyntaxError, match="missing \\[model\\]"):
        parse_model("[in]\ntype = input\nshape = 1:1:4\n")
    with pytest.raises(UnknownLayerKindError) as info:
        parse_model("[model]\nbatch = 2\n\n[rnn]\ntype = lstm\n")
    assert info.value.lineno == 4
    with pytest.raises(MissingPropertyError):
        parse_model("[model]\nbatch = 2\n\n[fc]\ntype = linear\n")
    with pytest.raises(UnknownPropertyError):
        parse_model("[model]\nbatch = 2\n\n[fc]\ntype = linear\nunits = 3\ncolour = red\n")
    with pytest.raises(UnknownPropertyError):
        parse_model("[model]\nbatch = 2\n\n[act]\ntype = sigmoid\ntrainable = false\n")


def test_duplicate_section_reports_line():
    text = "[model]\nbatch = 2\n[fc]\ntype = linear\nunits = 2\n[fc]\ntype = linear\nunits = 2\n"
    with pytest.raises(ModelSyntaxError) as info:
        parse_model(text)
    assert info.value.lineno is not None


def test_invalid_hyper_values():
    with pytest.raises(ModelSyntaxError):
        parse_model("[model]\nbatch = 0\n")
    with pytest.raises(ModelSyntaxError):
        parse_model("[model]\nbatch = 2\noptimizer = adam\n")


def test_realize_splits_activation_and_flatten(bundled):
    graph = realize(bundled("lin_sig_flat"))
    ids = [n.id for n in graph.layers]
    assert ids == ["in", "fc", "fc/sigmoid", "fc/flatten", "loss"]
    kinds = [n.kind for n in graph.layers]
    assert kinds[-1] is LayerKind.MSE_LOSS
    assert "activation" not in graph.node("fc").properties
    assert "flatten" not in graph.node("fc").properties


def test_realize_is_idempotent(bundled):
    for name in ("lin_sig_flat", "small_conv", "vgg16"):
        once = realize(bundled(name))
        assert realize(once) == once


def test_realize_synthesizes_input_from_model_section():
    graph = parse_model(
        "[model]\nbatch = 2\ninput_shape = 1:1:5\nloss = mse\n\n[fc]\ntype = linear\nunits = 3\n"
    )
    realized = realize(graph)
    assert realized.layers[0].kind is LayerKind.INPUT
    assert realized.layers[-1].kind is LayerKind.MSE_LOSS
    assert infer_shapes(realized)["fc"] == (Dim4(2, 1, 1, 5), Dim4(2, 1, 1, 3))


def test_realize_errors():
    no_loss = (
        "[model]\nbatch = 2\n\n[in]\ntype = input\nshape = 1:1:4\n\n"
        "[fc]\ntype = linear\nunits = 2\n"
    )
    with pytest.raises(RealizeError):
        realize(parse_model(no_loss))
    no_input = "[model]\nbatch = 2\nloss = mse\n\n[fc]\ntype = linear\nunits = 2\n"
    with pytest.raises(RealizeError):
        realize(parse_model(no_input))


def test_conv_and_flatten_shapes(bundled):
    shapes = infer_shapes(realize(bundled("conv_single")))
    assert shapes["conv"][1] == Dim4(32, 64, 32, 32)

    graph = realize(bundled("table5_conv_ac_fl"))
    shapes = infer_shapes(graph)
    conv = graph.compute_layers[0].id
    assert shapes[conv][1] == Dim4(64, 3, 112, 112)
    assert shapes[f"{conv}/flatten"][1] == Dim4(64, 1, 1, 3 * 112 * 112)

    linear = realize(bundled("table5_linear"))
    fc = linear.compute_layers[0].id
    assert infer_shapes(linear)[fc] == (Dim4(64, 1, 1, 150528), Dim4(64, 1, 1, 300))


def test_vgg16_reaches_one_by_one(bundled):
    graph = realize(bundled("vgg16"))
    shapes = infer_shapes(graph)
    convs = [n for n in graph.compute_layers if n.kind is LayerKind.CONV2D]
    linears = [n for n in graph.compute_layers if n.kind is LayerKind.LINEAR]
    assert (len(convs), len(linears)) == (13, 3)
    assert shapes[convs[-1].id][1] == Dim4(64, 512, 1, 1)
    assert shapes[linears[-1].id][1] == Dim4(64, 1, 1, 10)


def test_shape_errors():
    unflattened = (
        "[model]\nbatch = 2\nloss = mse\n\n[in]\ntype = input\nshape = 2:4:4\n\n"
        "[c]\ntype = conv2d\nfilters = 2\nkernel = 3x3\n\n[fc]\ntype = linear\nunits = 3\n"
    )
    with pytest.raises(ShapeError):
        realize(parse_model(unflattened))
    even_same = (
        "[model]\nbatch = 2\nloss = mse\n\n[in]\ntype = input\nshape = 2:4:4\n\n"
        "[c]\ntype = conv2d\nfilters = 2\nkernel = 2x2\n"
    )
    with pytest.raises(ShapeError):
        realize(parse_model(even_same))


def test_dim4_parse_and_format():
    dim = Dim4.parse("3:32:32", batch=8)
    assert dim == Dim4(8, 3, 32, 32)
    assert str(dim) == "8:3:32:32"
    assert dim.element_count == 8 * 3 * 32 * 32
    assert dim.shape == (8, 3, 32, 32)
