"""
eotrain hashing module

Digests and comparisons for weight sets and exported files.
"""

import hashlib
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np


def calculate_file_hash(
    file_path: Union[str, Path], method: str = "sha256", chunk_size: int = 8192
) -> str:
    """Calculate hash for a file

    Args:
        file_path: Path to the file
        method: Hash method (md5, sha1, sha256)
        chunk_size: Size of chunks to read

    Returns:
        Hash string
    """
    hash_func = getattr(hashlib, method)()

    with open(file_path, "rb") as f:
        while chunk := f.read(chunk_size):
            hash_func.update(chunk)

    return hash_func.hexdigest()


def hash_weights(weights: Mapping[str, np.ndarray], method: str = "sha256") -> str:
    """Digest of a weight set: names in sorted order, then shape and float32 bytes.

    Two runs produce the same digest only if every weight is bit-identical.
    """
    hash_func = getattr(hashlib, method)()
    for name in sorted(weights):
        array = np.ascontiguousarray(weights[name], dtype="<f4")
        hash_func.update(name.encode())
        hash_func.update(str(array.shape).encode())
        hash_func.update(array.tobytes())
    return hash_func.hexdigest()


def weight_deltas(
    weights1: Mapping[str, np.ndarray], weights2: Mapping[str, np.ndarray]
) -> Dict[str, float]:
    """Max absolute difference per weight name.

    Raises:
        ValueError: The two sets hold different names or shapes
    """
    if set(weights1) != set(weights2):
        raise ValueError(f"weight names differ: {sorted(weights1)} vs {sorted(weights2)}")
    deltas: Dict[str, float] = {}
    for name in sorted(weights1):
        a = np.asarray(weights1[name], dtype=np.float64)
        b = np.asarray(weights2[name], dtype=np.float64)
        if a.size != b.size:
            raise ValueError(f"'{name}': {a.shape} vs {b.shape}")
        deltas[name] = float(np.max(np.abs(a.reshape(-1) - b.reshape(-1)), initial=0.0))
    return deltas


def max_abs_delta(
    weights1: Mapping[str, np.ndarray], weights2: Mapping[str, np.ndarray]
) -> float:
    return max(weight_deltas(weights1, weights2).values(), default=0.0)

