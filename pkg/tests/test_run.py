import json
import os

import pandas as pd
import pytest

from gnnworkbench.models.run import CellPool, checkpoint_dir, run_experiment
from gnnworkbench.utils.archive import read_archive
from gnnworkbench.utils.experiment import ExperimentConfig

from conftest import small_experiment


def test_run_writes_the_result_store(small_run):
    config, summary = small_run
    # gcn and MLP training, one FGA cell covering both budgets
    assert summary == {"cells": 3, "cached": 0, "computed": 3, "failed": 0}

    for name in ("results.csv", "archive.json", "failures.json", "dataset.json", "experiment.json", "envelopes.csv"):
        assert os.path.exists(os.path.join(config.out, name))
    assert os.path.exists(os.path.join(checkpoint_dir(config.out, "gcn", 0), "manifest.json"))

    results = pd.read_csv(os.path.join(config.out, "results.csv"))
    clean = results[results["attack"] == "clean"]
    assert sorted(clean["model"]) == ["MLP", "gcn"]
    attacked = results[results["attack"] == "fga"]
    assert list(attacked["budget"]) == [0.05, 0.1]
    assert set(attacked["model"]) == {"gcn"}
    assert (results["metric"] == "accuracy").all()


def test_run_archives_prefix_flips(small_run):
    config, _ = small_run
    archive = read_archive(os.path.join(config.out, "archive.json"))
    small, large = sorted(archive.records, key=lambda r: r.budget)
    assert (small.source, small.attack, small.mode) == ("gcn", "fga", "evasion")
    assert len(small.flips) <= small.delta <= large.delta
    assert small.flip_set().issubset(large.flip_set())

    results = pd.read_csv(os.path.join(config.out, "results.csv"))
    attacked = results[results["attack"] == "fga"].sort_values("budget")
    assert list(attacked["value"]) == pytest.approx([small.perturbed_accuracy, large.perturbed_accuracy])
    clean = results[(results["attack"] == "clean") & (results["model"] == "gcn")]["value"].iloc[0]
    assert small.clean_accuracy == pytest.approx(clean)


def test_rerun_is_served_from_the_cache(small_run):
    config, _ = small_run
    before = pd.read_csv(os.path.join(config.out, "results.csv"))
    summary = run_experiment(config, log_level="WARNING")
    assert summary == {"cells": 3, "cached": 3, "computed": 0, "failed": 0}
    pd.testing.assert_frame_equal(before, pd.read_csv(os.path.join(config.out, "results.csv")))


def test_fresh_runs_with_workers_are_byte_identical(tmp_path):
    outputs = []
    for name in ("first", "second"):
        doc = small_experiment(str(tmp_path / name), workers=2)
        run_experiment(ExperimentConfig.from_dict(doc), log_level="WARNING")
        outputs.append({f: (tmp_path / name / f).read_bytes() for f in ("results.csv", "archive.json")})
    assert outputs[0] == outputs[1]


def test_failing_cells_do_not_stop_the_matrix(tmp_path):
    doc = small_experiment(
        str(tmp_path / "out"),
        attacks=[{"name": "fga"}, {"name": "meta", "preset": "greedy-meta", "overrides": {"meta_epochs": 5}}],
        modes=["evasion", "poisoning"],
        meta_memory_gb=1e-9,
    )
    summary = run_experiment(ExperimentConfig.from_dict(doc), log_level="WARNING")
    assert summary["failed"] == 1

    with open(tmp_path / "out" / "failures.json") as f:
        failures = json.load(f)
    assert "meta" in failures[0]["cell"]
    assert "MemoryBudgetError" in failures[0]["error"]

    results = pd.read_csv(tmp_path / "out" / "results.csv")
    fga = results[results["attack"] == "fga"]
    assert sorted(set(fga["mode"])) == ["evasion", "poisoning"]
    assert "meta" not in set(results["attack"])


def test_cells_of_a_dead_worker_are_recorded_as_failures():
    pool = CellPool(1, {}, "WARNING")
    dead = pool.processes[0]
    dead.kill()
    dead.join()

    seen = []

    def on_result(key, cell, payload, error, seconds):
        seen.append((key, payload, error))

    # the worker announced cell "a" before it was killed
    pool.result_q.put(("start", "a", dead.pid))
    pool.map([("a", {"kind": "train"})], on_result)
    pool.map([("b", {"kind": "train"})], on_result)
    pool.close()

    assert [key for key, _, _ in seen] == ["a", "b"]
    assert seen[0][1] is None and "exited with code" in seen[0][2]
    assert "no worker process left" in seen[1][2]
