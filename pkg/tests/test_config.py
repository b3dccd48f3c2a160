from pathlib import Path

import pytest
import yaml

from eotrain.core.config import TrainerConfig
from eotrain.core.utils import find_config


def test_create_and_save(temp_dir):
    config = TrainerConfig.create({"run": {"steps": 4}})
    assert config.is_modified
    path = config.save()
    assert path == Path(TrainerConfig.DEFAULT_CONFIG_NAME)
    assert not config.is_modified
    assert yaml.safe_load(path.read_text())["run"] == {"steps": 4}

    config.set("run", "merge", False)
    config.save()
    assert Path("eotrain.yaml.bak").exists()
    assert yaml.safe_load(Path("eotrain.yaml.bak").read_text())["run"] == {"steps": 4}


def test_load_and_find(temp_dir):
    assert TrainerConfig.find() is None
    assert find_config() is None
    with pytest.raises(FileNotFoundError):
        TrainerConfig.load("missing.yaml")
    with pytest.raises(FileNotFoundError):
        find_config("missing.yaml")

    TrainerConfig.create({"data": {"task": "scale", "scale": 3.0}}).save()
    config = find_config()
    assert config is not None
    assert config.model.data.task == "scale"
    assert config.model.data.scale == 3.0
    assert config.model.run.merge is True


def test_load_searches_parent_directories(temp_dir, monkeypatch):
    TrainerConfig.create({"run": {"poison": True}}).save()
    nested = Path(temp_dir) / "a" / "b"
    nested.mkdir(parents=True)
    monkeypatch.chdir(nested)
    assert TrainerConfig.load().model.run.poison is True


def test_set_rolls_back_invalid_values(temp_dir):
    config = TrainerConfig.create()
    with pytest.raises(ValueError, match="validation failed"):
        config.set("run", "steps", 0)
    assert "run" not in config.data
    config.set("run", "io_latency_ms", 2.5)
    with pytest.raises(ValueError):
        config.set("run", "io_latency_ms", -1.0)
    assert config.data["run"] == {"io_latency_ms": 2.5}
    assert config.validate() == (True, "Configuration is valid.")


def test_context_manager_saves_on_exit(temp_dir):
    TrainerConfig.create().save()
    with TrainerConfig.load() as config:
        config.set("report", "output", "run.json")
    assert TrainerConfig.load().model.report.output == "run.json"


def test_rejects_invalid_files(temp_dir):
    Path("broken.yaml").write_text("run: [steps\n")
    with pytest.raises(ValueError, match="YAML parsing error"):
        TrainerConfig.load("broken.yaml")
    Path("list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ValueError, match="mapping"):
        TrainerConfig.load("list.yaml")
    Path("bad.yaml").write_text("data:\n  task: classify\n")
    with pytest.raises(ValueError):
        TrainerConfig.load("bad.yaml")


def test_save_without_path():
    config = TrainerConfig({"version": "1.0"})
    with pytest.raises(ValueError, match="No save path"):
        config.save()
