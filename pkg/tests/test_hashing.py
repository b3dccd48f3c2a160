import hashlib

import numpy as np
import pytest

from eotrain.core.hashing import (
    calculate_file_hash,
    hash_weights,
    max_abs_delta,
    weight_deltas,
)


def _weights():
    return {
        "W0": np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3),
        "b0": np.zeros((1, 1, 1, 3), np.float32),
    }


def test_calculate_file_hash(tmp_path):
    path = tmp_path / "blob.bin"
    path.write_bytes(b"x" * 20000)
    assert calculate_file_hash(path) == hashlib.sha256(b"x" * 20000).hexdigest()
    assert calculate_file_hash(path, method="md5", chunk_size=7) == hashlib.md5(
        b"x" * 20000
    ).hexdigest()


def test_hash_weights_ignores_insertion_order():
    weights = _weights()
    reordered = {"b0": weights["b0"], "W0": weights["W0"]}
    assert hash_weights(weights) == hash_weights(reordered)
    assert len(hash_weights(weights)) == 64


def test_hash_weights_sees_single_bit_changes():
    weights = _weights()
    digest = hash_weights(weights)
    weights["W0"][0, 0, 1, 2] = np.nextafter(np.float32(5), np.float32(6))
    assert hash_weights(weights) != digest
    reshaped = {"W0": _weights()["W0"].reshape(1, 1, 3, 2), "b0": _weights()["b0"]}
    assert hash_weights(reshaped) != digest


def test_weight_deltas():
    a = _weights()
    b = {name: array.copy() for name, array in a.items()}
    b["W0"][0, 0, 0, 0] += 0.25
    assert weight_deltas(a, b) == {"W0": 0.25, "b0": 0.0}
    assert max_abs_delta(a, b) == 0.25
    assert max_abs_delta({}, {}) == 0.0
    with pytest.raises(ValueError, match="names differ"):
        weight_deltas(a, {"W0": b["W0"]})
    with pytest.raises(ValueError):
        weight_deltas(a, {"W0": b["W0"], "b0": np.zeros(2)})
