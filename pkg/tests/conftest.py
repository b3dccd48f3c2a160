import os
import tempfile
from typing import Callable, Iterator

import pytest

from eotrain.core.compiler import CompiledModel, compile_model
from eotrain.core.graph import ModelGraph, parse_model
from eotrain.core.utils import load_model


@pytest.fixture
def temp_dir() -> Iterator[str]:
    """Temporary working directory; the previous cwd is restored afterwards."""
    previous = os.getcwd()
    with tempfile.TemporaryDirectory() as tmp:
        os.chdir(tmp)
        try:
            yield tmp
        finally:
            os.chdir(previous)


@pytest.fixture
def bundled() -> Callable[[str], ModelGraph]:
    return load_model


@pytest.fixture
def compiled() -> Callable[..., CompiledModel]:
    def build(name: str, merge: bool = True) -> CompiledModel:
        return compile_model(load_model(name), merge=merge)

    return build


def linear_chain_text(
    widths, batch: int = 4, in_features: int = 8, bias: bool = True, extra: str = ""
) -> str:
    """Model text for input -> linear* -> mse."""
    lines = ["[model]", f"batch = {batch}", extra, "", "[in]", "type = input"]
    lines.append(f"shape = 1:1:{in_features}")
    for i, units in enumerate(widths):
        lines += ["", f"[fc{i}]", "type = linear", f"units = {units}"]
        if not bias:
            lines.append("bias = false")
    lines += ["", "[loss]", "type = mse", ""]
    return "\n".join(lines)


@pytest.fixture
def chain() -> Callable[..., ModelGraph]:
    def build(widths, **kwargs) -> ModelGraph:
        return parse_model(linear_chain_text(widths, **kwargs), name="chain")

    return build
