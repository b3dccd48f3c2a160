# eotrain/core/seed.py

"""
eotrain seed management module

Seeds the global generators a training session may touch and hands out the
per-component numpy Generators the runtime actually draws from.
"""

import importlib
import logging
import os
import random
from typing import List, Optional, Union

import numpy as np

# Create logger
logger = logging.getLogger("eotrain.seed")

# Libraries that need seed setting and their setup functions
KNOWN_LIBRARIES = {
    "numpy": "set_numpy_seed",
    "random": "set_python_random_seed",
    "python": "set_python_env_seed",
}

# offsets keep component streams independent under one run seed
_STREAM_OFFSETS = {"weights": 0, "data": 1}


def is_library_available(library_name: str) -> bool:
    """Check if a library is available in the current environment.

    Args:
        library_name: Name of the library to check

    Returns:
        bool: True if the library is available, False otherwise
    """
    try:
        importlib.import_module(library_name)
        return True
    except ImportError:
        return False


def set_python_random_seed(seed: int) -> None:
    random.seed(seed)
    logger.debug(f"Set Python random seed to {seed}")


def set_python_env_seed(seed: int) -> None:
    os.environ["PYTHONHASHSEED"] = str(seed)
    logger.debug(f"Set PYTHONHASHSEED to {seed}")


def set_numpy_seed(seed: int) -> None:
    """Seed numpy's legacy global generator.

    The runtime itself draws from `make_rng`; this covers code that still uses
    `np.random.*` directly.
    """
    np.random.seed(seed)
    logger.debug(f"Set NumPy seed to {seed}")


def set_seed(
    seed: int, libraries: Optional[Union[List[str], str]] = None, verbose: bool = False
) -> List[str]:
    """Set random seed for the given libraries (all known ones by default).

    Args:
        seed: The random seed to set
        libraries: Optional list of library names or single library name
        verbose: Whether to log the libraries that were seeded at INFO level

    Returns:
        List[str]: Libraries that were seeded
    """
    if libraries is None:
        libs_to_set = [name for name in KNOWN_LIBRARIES if is_library_available(name)
                       or name == "python"]
    elif isinstance(libraries, str):
        libs_to_set = [libraries]
    else:
        libs_to_set = list(libraries)

    for lib_name in libs_to_set:
        func = globals().get(KNOWN_LIBRARIES.get(lib_name, ""))
        if func is None:
            logger.warning(f"Unknown library: {lib_name}")
            continue
        try:
            func(seed)
        except Exception as e:
            logger.warning(f"Failed to set seed for {lib_name}: {e}")

    if verbose:
        logger.info(f"Random seeds set to {seed} for: {', '.join(libs_to_set)}")
    return libs_to_set


def make_rng(seed: int, stream: str = "weights") -> np.random.Generator:
    """Independent numpy Generator for one component of a run.

    Args:
        seed: Run seed
        stream: Component name: weights or data

    Returns:
        np.random.Generator: Seeded from (seed, stream offset)
    """
    if stream not in _STREAM_OFFSETS:
        raise ValueError(f"unknown rng stream '{stream}'")
    return np.random.default_rng([seed, _STREAM_OFFSETS[stream]])
