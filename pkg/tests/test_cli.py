import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from eotrain.cli.main import main
from eotrain.core.hashing import calculate_file_hash
from eotrain.core.swap import SwapStore


@pytest.fixture
def runner() -> CliRunner:
    return CliRunner()


def test_models_lists_bundled_files(runner):
    result = runner.invoke(main, ["models"])
    assert result.exit_code == 0
    names = result.output.split()
    assert "three_linear" in names and "vgg16" in names


def test_plan_prints_pool_and_bound(runner):
    result = runner.invoke(main, ["plan", "three_linear", "--no-merge"])
    assert result.exit_code == 0, result.output
    assert "pool_bytes: 1536" in result.output
    assert "lower_bound: 1536" in result.output


def test_plan_json(runner):
    result = runner.invoke(main, ["plan", "lin_sig_flat", "--json"])
    assert result.exit_code == 0, result.output
    data = json.loads(result.output)
    assert data["model"] == "lin_sig_flat"
    assert data["merge"] is True
    by_name = {t["name"]: t for t in data["tensors"]}
    assert by_name["X3"]["group"] == by_name["X1"]["group"]
    assert by_name["X0"]["offset"] is None


@pytest.mark.parametrize(
    "suffix,marker", [(".md", "# Memory plan: three_linear"), (".html", "<html>")]
)
def test_plan_reports(runner, tmp_path, suffix, marker):
    path = tmp_path / f"plan{suffix}"
    result = runner.invoke(main, ["plan", "three_linear", "--report", str(path)])
    assert result.exit_code == 0, result.output
    assert marker in path.read_text()


def test_train_writes_report_and_weights(runner, temp_dir):
    args = ["train", "three_linear", "--steps", "2", "-o", "report.json", "--weights", "w.swap"]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    report = json.loads(Path("report.json").read_text())
    assert report["iterations"] == 2
    assert report["weights_sha256"] in result.output
    assert set(SwapStore.load_arrays("w.swap")) == {"W0", "W1", "W2"}
    assert report["weights_file_sha256"] == calculate_file_hash("w.swap")

    resumed = runner.invoke(
        main, ["train", "three_linear", "--steps", "1", "--init-weights", "w.swap"]
    )
    assert resumed.exit_code == 0, resumed.output


def test_train_reads_run_config(runner, temp_dir):
    Path("eotrain.yaml").write_text("run:\n  steps: 3\nreport:\n  output: cfg.json\n")
    result = runner.invoke(main, ["train", "three_linear", "--swap", "on_demand"])
    assert result.exit_code == 0, result.output
    report = json.loads(Path("cfg.json").read_text())
    assert report["iterations"] == 3
    assert report["swap"]["mode"] == "ondemand"


def test_verify_passes(runner):
    result = runner.invoke(main, ["verify", "three_linear", "--steps", "3"])
    assert result.exit_code == 0, result.output
    assert "OK" in result.output


def test_static_sweep_csv(runner, temp_dir):
    result = runner.invoke(
        main, ["sweep", "three_linear", "--static", "--csv", "sweep.csv", "--markdown", "s.md"]
    )
    assert result.exit_code == 0, result.output
    frame = pd.read_csv("sweep.csv")
    assert list(frame["mode"]) == ["off", "ondemand", "reduced", "proactive"]
    assert frame.loc[0, "swap_in_count"] == 0
    assert "proactive" in Path("s.md").read_text()


def test_errors_exit_with_one_line(runner, tmp_path):
    result = runner.invoke(main, ["plan", "no_such_model"])
    assert result.exit_code == 1
    assert "FileNotFoundError" in result.output

    bad = tmp_path / "bad.ini"
    bad.write_text("[model]\nbatch = 2\n\n[rnn]\ntype = lstm\n")
    result = runner.invoke(main, ["plan", str(bad)])
    assert result.exit_code == 1
    assert "UnknownLayerKindError" in result.output

    result = runner.invoke(main, ["sweep", "three_linear", "--static", "--swap-modes", "x"])
    assert result.exit_code == 1
