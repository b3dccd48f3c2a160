"""Utility functions for the eotrain package."""

import logging
from pathlib import Path
from typing import List, Optional, Union

from .config import TrainerConfig
from .constants import KIB
from .graph import ModelGraph, parse_model

logger = logging.getLogger("eotrain.utils")

MODELS_DIR = Path(__file__).resolve().parent.parent / "models"
MODEL_SUFFIX = ".ini"


def find_config(path: Optional[Union[str, Path]] = None) -> Optional[TrainerConfig]:
    """Load the given run config, or the nearest eotrain.yaml when no path is given.

    Returns:
        TrainerConfig: Configuration object, None if no file was found and none was named.

    Raises:
        FileNotFoundError: `path` was given and does not exist
    """
    if path is not None:
        return TrainerConfig.load(path)
    return TrainerConfig.find()


def bundled_models() -> List[str]:
    return sorted(p.stem for p in MODELS_DIR.glob(f"*{MODEL_SUFFIX}"))


def bundled_model_path(name: str) -> Path:
    """Path of a model file shipped with the package.

    Raises:
        FileNotFoundError: No bundled model of that name
    """
    path = MODELS_DIR / f"{name}{MODEL_SUFFIX}"
    if not path.exists():
        raise FileNotFoundError(
            f"no bundled model '{name}' (available: {', '.join(bundled_models())})"
        )
    return path


def load_model(source: Union[str, Path]) -> ModelGraph:
    """Parse a model file, or a bundled model when `source` is not an existing path."""
    path = Path(source)
    if not path.exists():
        path = bundled_model_path(str(source))
    logger.debug(f"Loading model from {path}")
    return parse_model(path.read_text(encoding="utf-8"), name=path.stem)


def format_bytes(n: Union[int, float]) -> str:
    """Human-readable byte count (1024-based)."""
    value = float(n)
    for unit in ("B", "KiB", "MiB"):
        if abs(value) < KIB:
            return f"{value:.0f} {unit}" if unit == "B" else f"{value:.1f} {unit}"
        value /= KIB
    return f"{value:.2f} GiB"
