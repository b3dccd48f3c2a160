import logging
import os
import random

import numpy as np
import pytest

from eotrain.core.seed import make_rng, set_seed


def test_set_seed_defaults_to_all_known_libraries():
    seeded = set_seed(42)
    assert set(seeded) == {"numpy", "random", "python"}
    assert os.environ["PYTHONHASHSEED"] == "42"
    first = (random.random(), np.random.rand())
    set_seed(42)
    assert (random.random(), np.random.rand()) == first


def test_set_seed_single_library_and_unknown(caplog):
    assert set_seed(3, "numpy") == ["numpy"]
    with caplog.at_level(logging.WARNING, logger="eotrain.seed"):
        assert set_seed(3, ["numpy", "torch_like"]) == ["numpy", "torch_like"]
    assert "Unknown library: torch_like" in caplog.text


def test_make_rng_streams_are_reproducible_and_independent():
    first = make_rng(7, "weights").normal(size=8)
    np.testing.assert_array_equal(first, make_rng(7, "weights").normal(size=8))
    assert not np.array_equal(first, make_rng(7, "data").normal(size=8))
    assert not np.array_equal(first, make_rng(8, "weights").normal(size=8))


def test_make_rng_rejects_unknown_stream():
    with pytest.raises(ValueError, match="unknown rng stream"):
        make_rng(0, "dropout")
