# eotrain/core/config.py

"""
eotrain config module

Reading, validation and updating of the optional eotrain.yaml run configuration.
Model topology lives in the model file; this file holds how a model is trained:
data source, swap store directory, injected latency, poisoning, merging, report paths.
"""

import logging
import shutil
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import yaml
from pydantic import ValidationError
from yaml.parser import ParserError

from .constants import DEFAULT_CONFIG_NAME
from .models import RunConfigModel

logger = logging.getLogger("eotrain.config")


class TrainerConfig:
    """eotrain run configuration with context manager support"""

    DEFAULT_CONFIG_NAME = DEFAULT_CONFIG_NAME

    def __init__(self, config_data: Dict[str, Any], path: Optional[Path] = None):
        """Initialize the configuration object

        Args:
            config_data: Configuration data dictionary
            path: Configuration file path
        """
        self._data = config_data
        self._path = path
        self._model: Optional[RunConfigModel] = None
        self._modified = False
        self._validate_model()

    def __enter__(self) -> "TrainerConfig":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        if exc_type is None and self._modified and self._path:
            self.save()

    def _validate_model(self) -> None:
        try:
            self._model = RunConfigModel(**self._data)
        except ValidationError as e:
            raise ValueError(f"Configuration validation failed: {e}") from e

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None) -> "TrainerConfig":
        """Load configuration from file

        Args:
            path: Configuration file path; if None, search the current directory and its parents

        Returns:
            TrainerConfig: Configuration object

        Raises:
            FileNotFoundError: If the configuration file is not found
            ValueError: If the configuration file is not valid YAML or fails validation
        """
        config_path = cls._find_config_file(path)
        if not config_path:
            raise FileNotFoundError(
                f"Configuration file not found: {path or cls.DEFAULT_CONFIG_NAME}"
            )

        try:
            with open(config_path, "r", encoding="utf-8") as f:
                config_data = yaml.safe_load(f) or {}
        except ParserError as e:
            raise ValueError(f"YAML parsing error: {e}") from e
        if not isinstance(config_data, dict):
            raise ValueError(f"{config_path}: top level must be a mapping")
        logger.debug(f"Loaded run configuration from {config_path}")
        return cls(config_data, config_path)

    @classmethod
    def create(
        cls, data: Optional[Dict[str, Any]] = None, path: Optional[Union[str, Path]] = None
    ) -> "TrainerConfig":
        """New configuration (defaults unless `data` is given), marked as modified."""
        config = cls({"version": "1.0", **(data or {})})
        config._path = Path(path) if path else Path(cls.DEFAULT_CONFIG_NAME)
        config._modified = True
        return config

    @classmethod
    def find(cls) -> Optional["TrainerConfig"]:
        """Load the nearest eotrain.yaml, or None when there is none."""
        try:
            return cls.load()
        except FileNotFoundError:
            return None

    @staticmethod
    def _find_config_file(path: Optional[Union[str, Path]] = None) -> Optional[Path]:
        if path:
            p = Path(path)
            return p if p.exists() else None

        current_dir = Path.cwd()
        while True:
            config_path = current_dir / TrainerConfig.DEFAULT_CONFIG_NAME
            if config_path.exists():
                return config_path
            if current_dir.parent == current_dir:
                return None
            current_dir = current_dir.parent

    def save(self, path: Optional[Union[str, Path]] = None, encoding: str = "utf-8") -> Path:
        """Save configuration to file, keeping a .bak of the previous version

        Raises:
            ValueError: If no path is specified and no loading path exists
            IOError: If saving fails
        """
        if path:
            save_path = Path(path)
        elif self._path:
            save_path = self._path
        else:
            raise ValueError("No save path specified for TrainerConfig")

        if save_path.exists():
            backup_path = save_path.with_suffix(save_path.suffix + ".bak")
            try:
                shutil.copy2(save_path, backup_path)
            except OSError as e:
                logger.warning(f"Could not create backup for {save_path}: {e}")

        try:
            save_path.parent.mkdir(parents=True, exist_ok=True)
            with open(save_path, "w", encoding=encoding) as f:
                yaml.dump(
                    self._data,
                    f,
                    default_flow_style=False,
                    sort_keys=False,
                    allow_unicode=True,
                    width=88,
                )
        except OSError as e:
            raise IOError(f"Error saving configuration file to {save_path}: {e}") from e
        self._path = save_path
        self._modified = False
        return save_path

    def set(self, section: str, key: str, value: Any) -> None:
        """Set one value (e.g. set("run", "merge", False)) and revalidate."""
        previous = self._data.get(section)
        updated = dict(previous) if isinstance(previous, dict) else {}
        if updated.get(key) == value and key in updated:
            return
        updated[key] = value
        self._data[section] = updated
        try:
            self._validate_model()
        except ValueError:
            if previous is None:
                del self._data[section]
            else:
                self._data[section] = previous
            raise
        self._modified = True

    def validate(self) -> Tuple[bool, str]:
        try:
            self._validate_model()
            return True, "Configuration is valid."
        except ValueError as e:
            return False, str(e)

    @property
    def model(self) -> RunConfigModel:
        assert self._model is not None
        return self._model

    @property
    def data(self) -> Dict[str, Any]:
        return self._data

    @property
    def is_modified(self) -> bool:
        return self._modified

    @property
    def path(self) -> Optional[Path]:
        return self._path
