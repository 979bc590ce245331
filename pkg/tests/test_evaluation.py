import math

import numpy as np
import pandas as pd
import pytest

from gnnworkbench.utils.common import ArchiveError
from gnnworkbench.utils.evaluation import (
    RESULT_COLUMNS,
    RobustnessCurve,
    attack_characteristics,
    curve_from_points,
    degree_breakdown,
    degree_bucket,
    ensemble_transfer,
    envelope,
    envelope_table,
    local_auc,
    rauc,
    resample,
    score_table,
    spectrum_compare,
    transfer_scores,
    transfer_table,
)
from gnnworkbench.utils.gnn import ModelConfig
from gnnworkbench.utils.graph import EdgeFlipSet, dataset_checksum

from conftest import path_graph


def curve(*points, scope="global"):
    return RobustnessCurve(
        np.array([p[0] for p in points]), np.array([p[1] for p in points]), scope
    )


def test_rauc_of_a_line_reaching_the_mlp():
    assert rauc(curve((0.0, 1.0), (0.15, 0.6)), 0.6) == pytest.approx(0.5)


def test_rauc_bounds():
    assert rauc(curve((0.0, 1.0), (0.15, 1.0)), 0.6) == pytest.approx(1.0)
    assert rauc(curve((0.0, 0.5), (0.15, 0.4)), 0.6) == 0.0
    with pytest.raises(ValueError):
        rauc(curve((0.0, 1.0), (0.15, 0.6)), 1.0)


def test_rauc_stops_at_the_first_crossing():
    # the curve drops below the MLP and recovers; the recovery does not count
    c = curve((0.0, 1.0), (0.1, 0.2), (0.15, 0.9))
    expected = 0.5 * 0.4 * 0.1 * 0.4 / 0.8 / (0.4 * 0.15)
    assert rauc(c, 0.6) == pytest.approx(expected)


def test_rauc_holds_the_last_value_up_to_max_budget():
    short = curve((0.0, 0.8), (0.05, 0.8))
    assert rauc(short, 0.6, max_budget=0.15) == pytest.approx(1.0 * 0.2 / 0.4)


def test_local_auc():
    assert local_auc(curve((0.0, 1.0), (2.0, 0.5), scope="local")) == pytest.approx(0.75)
    assert local_auc(curve((0.0, 1.0), (1.0, 0.0), scope="local")) == pytest.approx(0.25)


def test_curve_helpers():
    c = curve_from_points([(0.1, 0.7), (0.0, 0.9), (0.1, 0.6)])
    np.testing.assert_allclose(c.budgets, [0.0, 0.1])
    np.testing.assert_allclose(c.accuracies, [0.9, 0.6])

    r = resample(c, [0.0, 0.05, 0.1, 0.2])
    np.testing.assert_allclose(r.accuracies, [0.9, 0.75, 0.6, 0.6])

    with pytest.raises(ValueError):
        curve((0.1, 0.5), (0.0, 0.6))
    with pytest.raises(ValueError):
        curve((0.0, 1.2))
    with pytest.raises(ValueError):
        curve_from_points([])


def test_envelope_is_the_monotone_pointwise_minimum():
    a = curve((0.0, 0.9), (0.1, 0.7))
    b = curve((0.0, 0.9), (0.05, 0.6), (0.1, 0.8))
    e = envelope([a, b])
    np.testing.assert_allclose(e.budgets, [0.0, 0.05, 0.1])
    np.testing.assert_allclose(e.accuracies, [0.9, 0.6, 0.6])
    with pytest.raises(ValueError):
        envelope([])


def test_attack_characteristics():
    g = path_graph(4)
    stats = attack_characteristics(g, EdgeFlipSet(((0, 1), (0, 3))))
    assert stats["flips"] == 2
    assert stats["degree"] == pytest.approx(1.25)
    assert stats["homophily"] == 0.0
    assert stats["removed"] == pytest.approx(0.5)
    assert stats["jaccard"] == 0.0
    assert stats["closeness"] > 0

    empty = attack_characteristics(g, EdgeFlipSet())
    assert empty["flips"] == 0
    assert math.isnan(empty["degree"]) and math.isnan(empty["homophily"])


def test_spectrum_compare():
    a = path_graph(4).adjacency
    out = spectrum_compare(a, a)
    np.testing.assert_allclose(out["difference"], 0.0)
    assert (np.diff(out["clean"]) <= 0).all()
    with pytest.raises(ValueError):
        spectrum_compare(np.zeros((2, 2)), np.zeros((3, 3)))


def test_degree_buckets():
    assert degree_bucket(0) == "1"
    assert degree_bucket(3) == "3"
    assert degree_bucket(12) == ">=10"
    assert degree_bucket(4, "local") is None
    assert degree_bucket(9, "local") == "degree_8_to_10"


def test_degree_breakdown():
    g = path_graph(4)  # degrees 1, 2, 2, 1
    broken = {0: 0.1, 1: None, 2: 0.05}
    out = degree_breakdown(g, broken, [0.0, 0.05, 0.1])
    assert out[0.0] is None
    assert out[0.05] == {"2": 1.0}
    assert out[0.1] == {"1": 0.5, "2": 0.5}
    assert degree_breakdown(g, broken, [0.1], cumulative=False)[0.1] == {"1": 1.0}


def results_frame() -> pd.DataFrame:
    rows = [
        ("global", "GCN", "clean", 0.0, None, "accuracy", 0.8),
        ("global", "GCN", "fga", 0.05, None, "accuracy", 0.7),
        ("global", "GCN", "fga", 0.15, None, "accuracy", 0.5),
        ("global", "GCN", "pgd", 0.05, None, "accuracy", 0.65),
        ("global", "GCN", "pgd", 0.15, None, "accuracy", 0.55),
        ("global", "GCN", "transfer:RGCN:pgd", 0.15, None, "accuracy", 0.45),
        ("global", "MLP", "clean", 0.0, None, "accuracy", 0.6),
        ("local", "GCN", "fga", 0.0, 5, "target_correct", 1.0),
        ("local", "GCN", "fga", 0.5, 5, "target_correct", 0.0),
        ("local", "GCN", "fga", 1.0, 5, "target_correct", 1.0),
        ("local", "GCN", "fga", 0.0, 6, "target_correct", 1.0),
        ("local", "GCN", "fga", 0.5, 6, "target_correct", 1.0),
        ("local", "GCN", "fga", 1.0, 6, "target_correct", 1.0),
    ]
    return pd.DataFrame(
        [
            dict(zip(RESULT_COLUMNS, ("d", scope, "evasion", model, attack, budget, 0, target, metric, value)))
            for scope, model, attack, budget, target, metric, value in rows
        ],
        columns=RESULT_COLUMNS,
    )


def test_envelope_table():
    env = envelope_table(results_frame())
    gcn = env[(env["scope"] == "global") & (env["model"] == "GCN")]
    np.testing.assert_allclose(gcn["budget"], [0.0, 0.05, 0.15])
    np.testing.assert_allclose(gcn["accuracy"], [0.8, 0.65, 0.45])

    local = env[env["scope"] == "local"]
    np.testing.assert_allclose(local["budget"], [0.0, 0.5, 1.0])
    # target 5 stays broken once broken
    np.testing.assert_allclose(local["accuracy"], [1.0, 0.5, 0.5])


def test_score_table():
    scores = score_table(envelope_table(results_frame()))
    assert "MLP" not in set(scores["model"])

    glob = scores[scores["scope"] == "global"]["score"].iloc[0]
    area = 0.5 * (0.2 + 0.05) * 0.05 + 0.5 * 0.05 * 0.1 * 0.05 / 0.2
    assert glob == pytest.approx(area / (0.4 * 0.15))

    local = scores[scores["scope"] == "local"]["score"].iloc[0]
    assert local == pytest.approx((0.375 + 0.25 + 0.5) / 2.0)


def test_score_table_needs_the_mlp_of_the_same_mode():
    frame = results_frame()
    frame.loc[frame["model"] == "MLP", "mode"] = "poisoning"
    scores = score_table(envelope_table(frame))
    assert set(scores["scope"]) == {"local"}


def test_transfer_table():
    table = transfer_table(results_frame())
    assert list(table["source"]) == ["GCN", "RGCN"]
    own = rauc(curve((0.0, 0.8), (0.05, 0.65), (0.15, 0.5)), 0.6, 0.15)
    other = rauc(curve((0.0, 0.8), (0.15, 0.45)), 0.6, 0.15)
    np.testing.assert_allclose(table["rauc"], [own, other])
    assert list(table["row_min"]) == [True, False]


def test_empty_tables():
    empty = pd.DataFrame(columns=RESULT_COLUMNS)
    assert envelope_table(empty).empty
    assert transfer_table(empty).empty


def record(graph, flips, source="GCN", budget=0.05, seed=0, mode="evasion", checksum=None):
    return {
        "dataset": graph.name,
        "checksum": checksum or dataset_checksum(graph),
        "scope": "global",
        "mode": mode,
        "source": source,
        "attack": "fga",
        "budget": budget,
        "delta": max(1, len(flips)),
        "split_seed": seed,
        "flips": flips,
        "clean_accuracy": 0.0,
        "perturbed_accuracy": 0.0,
        "target": None,
        "config_hash": "",
    }


def test_transfer_scores_and_ensembles(tiny, tiny_split):
    config = ModelConfig(kind="GCN", hidden=[8], max_epochs=5, patience=None)
    records = [
        record(tiny, []),
        record(tiny, [[0, 1]], source="RGCN", budget=0.1),
        record(tiny, [[0, 2]], mode="poisoning"),
    ]
    models = {}
    scores = transfer_scores(records, "GCN", config, tiny, {0: tiny_split}, models=models)
    # the poisoning record is not scored, every seed gets a clean row
    assert list(scores["attack"]) == ["fga", "fga", "clean"]
    assert scores["accuracy"].iloc[0] == scores["accuracy"].iloc[2]
    assert set(models) == {0}

    e = ensemble_transfer(records, ["GCN", "RGCN"], "GCN", config, tiny, {0: tiny_split}, models=models)
    np.testing.assert_allclose(e.budgets, [0.0, 0.05, 0.1])
    assert (np.diff(e.accuracies) <= 0).all()

    with pytest.raises(ValueError):
        ensemble_transfer(records, [], "GCN", config, tiny, {0: tiny_split})


def test_transfer_scores_refuse_foreign_records(tiny, tiny_split):
    config = ModelConfig(kind="GCN", hidden=[8], max_epochs=2, patience=None)
    with pytest.raises(ArchiveError, match="refusing"):
        transfer_scores([record(tiny, [], checksum="f" * 64)], "GCN", config, tiny, {0: tiny_split})
