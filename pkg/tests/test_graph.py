import json

import numpy as np
import pytest
import scipy.sparse as sp

import gnnworkbench.utils.autodiff as ad
from gnnworkbench.utils.common import DatasetError, SplitError
from gnnworkbench.utils.graph import (
    EdgeFlipSet,
    Graph,
    apply_flips,
    candidate_pairs,
    dataset_checksum,
    gcn_normalize,
    largest_component,
    load_dataset,
    make_split,
    parse_dataset,
    relax,
    save_dataset,
)

from conftest import path_graph


def test_graph_validation():
    with pytest.raises(DatasetError, match="self-loop"):
        Graph(np.eye(3), np.eye(3), [0, 1, 0], 2)
    with pytest.raises(DatasetError, match="asymmetric"):
        Graph(np.triu(np.ones((3, 3)), 1), np.eye(3), [0, 1, 0], 2)
    with pytest.raises(DatasetError, match="binary"):
        Graph(2 * (np.ones((2, 2)) - np.eye(2)), np.eye(2), [0, 1], 2)
    with pytest.raises(DatasetError, match="features"):
        Graph(np.zeros((3, 3)), np.eye(2), [0, 1, 0], 2)
    with pytest.raises(DatasetError, match="labels"):
        Graph(np.zeros((3, 3)), np.eye(3), [0, 1, 2], 2)


def test_graph_properties():
    g = path_graph(4)
    assert (g.n, g.m, g.d) == (4, 3, 4)
    np.testing.assert_array_equal(g.degrees(), [1, 2, 2, 1])
    rows, cols = g.edge_pairs()
    assert list(zip(rows, cols)) == [(0, 1), (1, 2), (2, 3)]
    np.testing.assert_array_equal(g.hop_neighborhood([0], 2), [0, 1, 2])
    assert not g.dense_adjacency().flags.writeable

    sub = g.subgraph([1, 2, 3])
    assert (sub.n, sub.m) == (3, 2)


def test_edge_flip_set_normalizes_pairs():
    flips = EdgeFlipSet(((3, 1), (0, 2)))
    assert flips.pairs == ((0, 2), (1, 3))
    assert (1, 3) in flips and (3, 1) in flips
    assert EdgeFlipSet.from_list(flips.to_list()) == flips
    assert EdgeFlipSet(((0, 2),)).issubset(flips)

    mask = EdgeFlipSet.from_mask([0, 0, 1], [1, 2, 2], [True, False, True])
    assert mask.pairs == ((0, 1), (1, 2))

    with pytest.raises(ValueError):
        EdgeFlipSet(((1, 1),))
    with pytest.raises(ValueError):
        EdgeFlipSet(((0, 1), (1, 0)))


def test_apply_flips_toggles_entries():
    g = path_graph(4)
    flipped = apply_flips(g, EdgeFlipSet(((0, 1), (0, 3))))
    assert flipped.m == 3
    assert flipped.adjacency[0, 1] == 0 and flipped.adjacency[3, 0] == 1
    # the clean graph is untouched
    assert g.adjacency[0, 1] == 1

    assert apply_flips(g, EdgeFlipSet()) is g
    with pytest.raises(IndexError):
        apply_flips(g, EdgeFlipSet(((0, 9),)))


def test_relax_interpolates_between_graphs():
    a = path_graph(3).dense_adjacency()
    p = np.zeros((3, 3))
    p[0, 1] = p[1, 0] = 0.25
    p[0, 2] = p[2, 0] = 1.0
    r = relax(a, p)
    assert r[0, 1] == pytest.approx(0.75)
    assert r[0, 2] == pytest.approx(1.0)
    assert r[1, 2] == pytest.approx(1.0)

    vg = ad.ValueGraph()
    rv = relax(a, vg.leaf(p))
    np.testing.assert_allclose(rv.value, r)


def test_gcn_normalize_matches_formula():
    a = path_graph(3).dense_adjacency()
    d = np.array([2.0, 3.0, 2.0]) ** -0.5
    expected = (a + np.eye(3)) * d[:, None] * d[None, :]
    np.testing.assert_allclose(gcn_normalize(a), expected)


def test_make_split_is_deterministic_and_disjoint(sbm):
    s1 = make_split(sbm, (0.2, 0.2, 0.6), seed=3)
    s2 = make_split(sbm, (0.2, 0.2, 0.6), seed=3)
    s3 = make_split(sbm, (0.2, 0.2, 0.6), seed=4)
    np.testing.assert_array_equal(s1.train, s2.train)
    assert not np.array_equal(s1.train, s3.train)
    assert len(s1.train) == round(sbm.n * 0.2)
    union = np.concatenate([s1.train, s1.val, s1.test])
    assert len(np.unique(union)) == len(union) == sbm.n

    with pytest.raises(ValueError):
        make_split(sbm, (0.5, 0.5, 0.5))
    with pytest.raises(SplitError):
        make_split(path_graph(2), (0.4, 0.3, 0.3))


def test_candidate_pairs(sbm):
    rows, cols = candidate_pairs(sbm)
    assert len(rows) == sbm.n * (sbm.n - 1) // 2
    assert np.all(rows < cols)

    g = path_graph(6)
    rows, cols = candidate_pairs(g, "local", target=0, radius=1)
    # every pair touching node 0 or 1
    assert len(rows) == 5 + 4
    assert np.all((rows <= 1) | (cols <= 1))

    with pytest.raises(ValueError):
        candidate_pairs(g, "local")


def test_save_and_load_keep_the_checksum(tmp_path, sbm):
    path = tmp_path / "sbm.json"
    checksum = save_dataset(sbm, str(path))
    assert checksum == dataset_checksum(sbm)

    loaded = load_dataset(str(path), checksum=checksum)
    assert loaded.checksum == checksum
    assert loaded.name == sbm.name
    assert (abs(loaded.adjacency - sbm.adjacency)).nnz == 0
    np.testing.assert_array_equal(loaded.features, sbm.features)

    with pytest.raises(DatasetError, match="Checksum mismatch"):
        load_dataset(str(path), checksum="0" * 64)


def test_load_dataset_errors(tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(str(tmp_path / "missing.json"))

    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(DatasetError, match="Malformed"):
        load_dataset(str(bad))


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"edges": [[1, 0]]}, "i < j"),
        ({"edges": [[0, 5]]}, "out of range"),
        ({"edges": [[0, 1], [0, 1]]}, "duplicate"),
        ({"labels": [0, 1]}, "labels"),
        ({"m": 4}, "declared"),
    ],
)
def test_parse_dataset_rejects_malformed_documents(patch, message):
    doc = {
        "n": 3,
        "num_classes": 2,
        "edges": [[0, 1]],
        "features": {"shape": [3, 1], "nonzeros": [[0, 0, 1.0]]},
        "labels": [0, 1, 0],
    }
    doc.update(patch)
    with pytest.raises(DatasetError, match=message):
        parse_dataset(json.loads(json.dumps(doc)))


def test_npz_container(tmp_path):
    a = sp.csr_matrix(np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]], dtype=float))
    path = tmp_path / "tiny.npz"
    np.savez(
        path,
        adj_data=a.data,
        adj_indices=a.indices,
        adj_indptr=a.indptr,
        adj_shape=np.array(a.shape),
        labels=np.array([4, 7, 4]),
    )
    g = load_dataset(str(path), format="npz")
    assert (g.n, g.m, g.num_classes) == (3, 2, 2)
    np.testing.assert_array_equal(g.labels, [0, 1, 0])
    np.testing.assert_array_equal(g.features, np.eye(3))


def test_largest_component():
    a = np.zeros((6, 6))
    for i, j in ((0, 4), (4, 5), (1, 2)):
        a[i, j] = a[j, i] = 1
    g = Graph(a, np.arange(36.0).reshape(6, 6), [0, 1, 1, 0, 1, 0], 2)
    lcc = largest_component(g)
    assert (lcc.n, lcc.m, lcc.num_classes) == (3, 2, 2)
    np.testing.assert_array_equal(lcc.labels, [0, 1, 0])
    np.testing.assert_array_equal(lcc.features[:, 0], [0.0, 24.0, 30.0])

    connected = path_graph(4)
    assert largest_component(connected) is connected
