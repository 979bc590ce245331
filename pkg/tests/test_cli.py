import os

import pandas as pd
import pytest
import yaml
from typer.testing import CliRunner

import gnnworkbench.models.score
from gnnworkbench import __version__
from gnnworkbench.cli.main import app
from gnnworkbench.models.run import checkpoint_dir
from gnnworkbench.utils.graph import load_dataset

from conftest import small_experiment

runner = CliRunner()


def test_version():
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout


def test_sbm_then_convert(tmp_path):
    path = str(tmp_path / "data" / "sbm.json")
    result = runner.invoke(
        app, ["util", "sbm", "-o", path, "-b", "5", "-b", "6", "--p-in", "0.5", "--p-out", "0.1", "-s", "1"]
    )
    assert result.exit_code == 0, result.stdout
    checksum = result.stdout.strip().splitlines()[-1]
    graph = load_dataset(path)
    assert (graph.n, graph.num_classes, graph.checksum) == (11, 2, checksum)

    copy = str(tmp_path / "copy.json")
    result = runner.invoke(app, ["convert", "-i", path, "-o", copy])
    assert result.exit_code == 0
    assert result.stdout.strip().splitlines()[-1] == checksum


def test_sbm_rejects_bad_features(tmp_path):
    result = runner.invoke(app, ["util", "sbm", "-o", str(tmp_path / "x.json"), "-b", "4", "-f", "[1, 2]"])
    assert result.exit_code == 1
    result = runner.invoke(app, ["util", "sbm", "-o", str(tmp_path / "x.json"), "-b", "4", "--p-in", "1.5"])
    assert result.exit_code == 1


def test_attack_command_applies_overrides(tmp_path):
    config = tmp_path / "experiment.yaml"
    config.write_text(yaml.safe_dump(small_experiment("ignored", budgets={"global": [0.05]})))
    out = tmp_path / "store"

    result = runner.invoke(app, ["attack", "-c", str(config), "-o", str(out), "-x", "0", "-l", "warning"])
    assert result.exit_code == 0, result.stdout
    results = pd.read_csv(out / "results.csv")
    assert set(results["attack"]) == {"clean", "fga"}
    assert not os.path.exists(tmp_path / "ignored")

    result = runner.invoke(app, ["report", "-o", str(out)])
    assert result.exit_code == 0


def test_attack_command_rejects_invalid_documents(tmp_path):
    config = tmp_path / "experiment.yaml"
    config.write_text(yaml.safe_dump(small_experiment("x", workers=-2)))
    assert runner.invoke(app, ["attack", "-c", str(config)]).exit_code == 1


def test_score_exit_codes(small_run, monkeypatch):
    monkeypatch.setattr(
        gnnworkbench.models.score,
        "_mlp_accuracy",
        lambda preset, graph, splits, mode, offset: {s: 0.5 for s in splits},
    )
    config, _ = small_run
    args = [
        "score",
        "-a",
        os.path.join(config.out, "archive.json"),
        "-d",
        os.path.join(config.out, "dataset.json"),
        "-m",
        checkpoint_dir(config.out, "gcn", 0),
    ]

    failed = runner.invoke(app, args + ["-t", "1.5"])
    assert failed.exit_code == 2
    assert failed.stdout.strip().splitlines()[-1].startswith("FAIL: gcn")

    passed = runner.invoke(app, args + ["-t", "0"])
    assert passed.exit_code == 0
    assert "PASS" in passed.stdout

    assert runner.invoke(app, args + ["--mode", "poisoning"]).exit_code == 1


@pytest.mark.parametrize("command", [["report", "-o", "."], ["util", "spectrum", "-r", "0"]])
def test_commands_need_their_inputs(command, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert runner.invoke(app, command).exit_code != 0
