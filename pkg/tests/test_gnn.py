import logging

import numpy as np
import pytest
import scipy.sparse as sp

import gnnworkbench.utils.autodiff as ad
from gnnworkbench.utils.common import ConfigError, NumericError, make_rng
from gnnworkbench.utils.gnn import (
    GLOBAL,
    ModelConfig,
    accuracy,
    build_model,
    forward,
    gnnguard_reweight,
    jaccard_mask,
    jaccard_similarity,
    load_checkpoint,
    low_rank_approx,
    ppr_topk,
    predict,
    receptive_hops,
    save_checkpoint,
    soft_median_aggregate,
    svd_subspace_weights,
)
from gnnworkbench.utils.graph import EdgeFlipSet, Graph, apply_flips, candidate_pairs, gcn_normalize
from gnnworkbench.utils.losses import attack_loss
from gnnworkbench.utils.synthetic import generate_sbm

from conftest import path_graph

KINDS = ["GCN", "JaccardGCN", "SvdGCN", "RGCN", "GNNGuard", "SoftMedianGDC"]


def fresh_model(kind: str, graph, seed: int = 0, **overrides):
    knobs = {"kind": kind, "hidden": [8], "rank": 4, "topk": 8}
    knobs.update(overrides)
    model = build_model(ModelConfig(**knobs), graph.d, graph.num_classes, seed)
    model.preprocess(graph.dense_adjacency(), graph.features)
    model.params = model.init_params(make_rng("test-init", seed))
    return model


def graph_from_edges(n: int, edges: list, num_classes: int = 2) -> Graph:
    rows, cols = zip(*edges)
    upper = sp.csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(n, n))
    return Graph(
        adjacency=upper + upper.T,
        features=np.eye(n),
        labels=np.arange(n) % num_classes,
        num_classes=num_classes,
        name="toy",
    )


def clique_and_star() -> Graph:
    # K4 on 0-3, a star centered at 4 with leaves 5-7, nodes 8 and 9 isolated
    clique = [(i, j) for i in range(4) for j in range(i + 1, 4)]
    return graph_from_edges(10, clique + [(4, 5), (4, 6), (4, 7)])


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


@pytest.mark.parametrize(
    "knobs",
    [
        {"kind": "ChebNet"},
        {"hidden": []},
        {"dropout": 1.0},
        {"rank": 0},
        {"temperature": 0.0},
        {"ppr_alpha": 1.0},
        {"optimizer": "lbfgs"},
        {"max_epochs": 10, "patience": 20},
    ],
)
def test_model_config_validation(knobs):
    with pytest.raises(ConfigError):
        ModelConfig(**knobs)


def test_model_config_round_trip():
    config = ModelConfig(kind="RGCN", hidden=[32], gamma=2.0)
    assert ModelConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ConfigError, match="Unknown model config keys"):
        ModelConfig.from_dict({"kind": "GCN", "layers": 3})


@pytest.mark.parametrize("kind", KINDS)
def test_attack_forward_gradient(kind, tiny):
    model = fresh_model(kind, tiny)
    a = tiny.dense_adjacency()
    rng = np.random.default_rng(0)
    all_rows, all_cols = candidate_pairs(tiny)
    pick = np.sort(rng.choice(len(all_rows), size=15, replace=False))
    rows, cols = all_rows[pick], all_cols[pick]
    nodes = np.arange(tiny.n)

    def fn(vg, x):
        delta = ad.pairs_to_dense(x, rows, cols, tiny.n)
        logits = forward(model, a, tiny.features, "attack", perturbation=delta, vg=vg)
        return attack_loss("CE", logits, tiny.labels, nodes)

    point = rng.uniform(0.1, 0.4, size=len(rows))
    assert ad.finite_difference_check(fn, point) < 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_attack_forward_at_zero_matches_eval(kind, tiny):
    model = fresh_model(kind, tiny)
    a = tiny.dense_adjacency()
    vg = ad.ValueGraph()
    rows, cols = candidate_pairs(tiny)
    delta = ad.pairs_to_dense(vg.leaf(np.zeros(len(rows))), rows, cols, tiny.n)
    relaxed = forward(model, a, tiny.features, "attack", perturbation=delta, vg=vg).value
    np.testing.assert_allclose(relaxed, predict(model, tiny), atol=1e-8)


@pytest.mark.parametrize("kind", ["MLP", "GCN", "RGCN", "GNNGuard"])
def test_receptive_field_subgraph_is_exact(kind):
    graph = generate_sbm([20, 20], 0.08, 0.01, {"kind": "bernoulli", "dim": 16}, seed=11)
    model = fresh_model(kind, graph)
    full = predict(model, graph)
    hops = receptive_hops(kind, model.n_layers)
    for target in (0, 7, 33):
        nodes = graph.hop_neighborhood([target], hops)
        sub = graph.subgraph(nodes)
        z = forward(model, sub.dense_adjacency(), sub.features).value
        np.testing.assert_allclose(
            z[int(np.searchsorted(nodes, target))], full[target], atol=1e-10
        )


def test_receptive_hops_values():
    assert receptive_hops("MLP") == 0
    assert receptive_hops("GCN", 2) == 3
    assert receptive_hops("GNNGuard", 2) == 4
    assert receptive_hops("SvdGCN") == GLOBAL
    with pytest.raises(ValueError):
        receptive_hops("ChebNet")


@pytest.mark.parametrize("kind", KINDS + ["MLP"])
def test_checkpoint_round_trip(kind, tiny, tmp_path):
    model = fresh_model(kind, tiny, seed=4)
    save_checkpoint(model, str(tmp_path / kind))
    loaded = load_checkpoint(str(tmp_path / kind))
    assert loaded.kind == model.kind
    assert loaded.seed == 4
    np.testing.assert_array_equal(predict(loaded, tiny), predict(model, tiny))

    with pytest.raises(ConfigError):
        load_checkpoint(str(tmp_path / "missing"))


def test_jaccard_similarity():
    x = np.array([[1, 1, 0], [1, 0, 0], [0, 0, 0]])
    np.testing.assert_allclose(
        jaccard_similarity(x), [[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.0]]
    )


def test_jaccard_gcn_requires_preprocessing(tiny):
    model = build_model(ModelConfig(kind="JaccardGCN", hidden=[4]), tiny.d, tiny.num_classes)
    model.params = model.init_params(make_rng("x"))
    with pytest.raises(NumericError):
        predict(model, tiny)


def test_low_rank_approx_full_rank_is_exact(tiny):
    a = tiny.dense_adjacency()
    np.testing.assert_allclose(low_rank_approx(a, tiny.n), a, atol=1e-10)
    with pytest.raises(ValueError):
        low_rank_approx(a, tiny.n + 1)


def test_ppr_topk_keeps_row_mass(tiny):
    a = gcn_normalize(tiny.dense_adjacency())
    full = ppr_topk(a, 0.15, tiny.n)
    top = ppr_topk(a, 0.15, 4)
    assert ((top > 0).sum(axis=1) <= 4).all()
    np.testing.assert_allclose(top.sum(axis=1), full.sum(axis=1))
    with pytest.raises(ValueError):
        ppr_topk(a, 1.5, 4)


def test_soft_median_downweights_outliers():
    vg = ad.ValueGraph()
    h = vg.constant(np.array([[0.0], [1.0], [100.0]]))
    out = soft_median_aggregate(np.array([[1.0, 1.0, 1.0]]), h, temperature=0.01)
    # the outlier gets (almost) no weight, the median row keeps most of it
    assert out.value[0, 0] == pytest.approx(3.0 * 1.0, rel=1e-3)


def test_accuracy():
    logits = np.array([[2.0, 1.0], [0.0, 1.0], [3.0, 0.0]])
    labels = np.array([0, 0, 0])
    assert accuracy(logits, labels, [0, 1, 2]) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        accuracy(logits, labels, [])


def test_svd_weights_full_rank_are_one(tiny):
    w = svd_subspace_weights(tiny.dense_adjacency(), tiny.n)
    np.testing.assert_allclose(w, 1.0, atol=1e-10)


def test_svd_weights_are_symmetric():
    rng = np.random.default_rng(5)
    upper = np.triu(rng.random((9, 9)) < 0.4, 1).astype(float)
    w = svd_subspace_weights(upper + upper.T, 3)
    np.testing.assert_allclose(w, w.T)
    assert w.min() >= 0.0 and w.max() <= 1.0


def test_svd_weights_on_a_star(caplog):
    a = graph_from_edges(5, [(0, j) for j in range(1, 5)]).dense_adjacency()
    # singular values 2, 2, 0, 0, 0: the top pair spans e_0 and the uniform leaf vector
    w = svd_subspace_weights(a, 2)
    assert w[0, 0] == pytest.approx(1.0)
    np.testing.assert_allclose(w[0, 1:], 0.625)
    np.testing.assert_allclose(w[1:, 1:], 0.25)

    with caplog.at_level(logging.WARNING, logger="gnnworkbench"):
        single = svd_subspace_weights(a, 1)
    assert "Degenerate singular values" in caplog.text
    d = np.diag(single)
    np.testing.assert_allclose(single, (d[:, None] + d[None, :]) / 2)


def test_svd_weights_rank_the_true_logit_change():
    graph = clique_and_star()
    model = fresh_model("SvdGCN", graph, rank=3)
    weights = model.state["weights"]
    assert weights[8, 9] < 1e-8 and weights[0, 4] > 0.5
    clean = predict(model, graph)

    def change(pair):
        flipped = apply_flips(graph, EdgeFlipSet((pair,)))
        return np.linalg.norm(predict(model, flipped) - clean)

    low, high = change((8, 9)), change((0, 4))
    assert low < 1e-8
    assert low <= high


def test_svd_surrogate_tracks_the_recomputed_lra():
    graph = clique_and_star()
    model = fresh_model("SvdGCN", graph, rank=6)
    assert model.state["weights"][0, 1] > 0.99

    vg = ad.ValueGraph()
    delta = ad.pairs_to_dense(vg.leaf(np.ones(1)), np.array([0]), np.array([1]), graph.n)
    surrogate = forward(model, graph.dense_adjacency(), graph.features, "attack", perturbation=delta, vg=vg)
    exact = predict(model, apply_flips(graph, EdgeFlipSet(((0, 1),))))
    assert np.linalg.norm(surrogate.value - exact) <= 0.05 * np.linalg.norm(exact)


def test_low_rank_approx_error_is_the_discarded_spectrum():
    rng = np.random.default_rng(8)
    upper = np.triu(rng.random((8, 8)) < 0.5, 1).astype(float)
    a = upper + upper.T
    s = np.linalg.svd(a, compute_uv=False)
    error = np.linalg.norm(a - low_rank_approx(a, 3))
    assert error == pytest.approx(np.sqrt(np.sum(s[3:] ** 2)), abs=1e-8)


def reweight(hidden, a, previous=None, rho=None):
    vg = ad.ValueGraph()
    previous = None if previous is None else vg.constant(previous)
    rho = None if rho is None else vg.constant(np.array(rho))
    return gnnguard_reweight(vg.constant(hidden), vg.constant(a), previous, rho, 1e-6, 0.1).value


def test_gnnguard_keeps_edges_between_identical_embeddings():
    a = path_graph(4).dense_adjacency()
    deg = a.sum(axis=1)
    expected = np.where(a > 0, np.exp(1.0 / deg)[:, None], 0.0) + np.diag(np.exp(1.0 / (1.0 + deg)))
    np.testing.assert_allclose(reweight(np.ones((4, 3)), a), expected, rtol=1e-10)


def test_gnnguard_drops_edges_between_orthogonal_embeddings():
    a = path_graph(4).dense_adjacency()
    np.testing.assert_allclose(reweight(np.eye(4), a), np.e * np.eye(4), atol=1e-12)


def test_gnnguard_on_a_three_node_path():
    a = path_graph(3).dense_adjacency()
    h = np.array([[1.0, 0.0], [1.0, 1.0], [-1.0, 0.05]])
    # cos(0, 1) is kept, cos(1, 2) < 0 is filtered so node 2 keeps only its self-loop
    expected = np.array(
        [[np.exp(0.5), np.e, 0.0], [np.e, np.exp(0.5), 0.0], [0.0, 0.0, np.e]]
    )
    np.testing.assert_allclose(reweight(h, a), expected, rtol=1e-10)
    # memory gate sigmoid(0) = 1/2
    smoothed = reweight(h, a, previous=np.eye(3), rho=0.0)
    np.testing.assert_allclose(smoothed, 0.5 * np.eye(3) + 0.5 * expected, rtol=1e-10)


def test_rgcn_without_attention_is_an_elu_gcn(tiny):
    model = fresh_model("RGCN", tiny, gamma=0.0)
    a = gcn_normalize(tiny.dense_adjacency())
    h = a @ elu(tiny.features @ model.params["Wm0"])
    np.testing.assert_allclose(predict(model, tiny), a @ elu(h @ model.params["Wm1"]), atol=1e-12)


@pytest.mark.parametrize("mode, eps", [("eval", 1e-8), ("attack", 1e-2)])
def test_rgcn_kl_penalty_with_zero_variance(mode, eps):
    graph = path_graph(2)
    model = build_model(ModelConfig(kind="RGCN", hidden=[2], beta=0.5), graph.d, graph.num_classes)
    model.preprocess(graph.dense_adjacency(), graph.features)
    rng = np.random.default_rng(0)
    params = {
        "Wm0": rng.normal(size=(2, 2)),
        "Wv0": np.zeros((2, 2)),
        "Wm1": rng.normal(size=(2, 2)),
        "Wv1": np.zeros((2, 2)),
    }
    vg = ad.ValueGraph()
    _, penalty = model.forward_with_penalty(
        vg, {k: vg.constant(v) for k, v in params.items()}, graph.dense_adjacency(), graph.features, mode
    )
    # both nodes average the pair, so every row of the first-layer mean is the same
    mu = elu(params["Wm0"]).mean(axis=0)
    kl = 0.5 * (mu**2 - np.log(eps))
    assert float(penalty.value) == pytest.approx(0.5 * 2 * kl.mean())


def test_soft_median_flattens_to_the_weighted_mean():
    rng = np.random.default_rng(2)
    hidden = rng.uniform(0.0, 0.5, size=(5, 2))
    weights = rng.uniform(0.1, 1.0, size=(3, 5))
    weights /= weights.sum(axis=1, keepdims=True)
    vg = ad.ValueGraph()
    out = soft_median_aggregate(weights, vg.constant(hidden), temperature=1e6)
    np.testing.assert_allclose(out.value, weights @ hidden, atol=1e-6)


def test_jaccard_mask_shrinks_with_eps():
    assert jaccard_similarity(np.array([[1, 1, 0], [1, 0, 1]]))[0, 1] == pytest.approx(1 / 3)

    x = (np.random.default_rng(1).random((12, 6)) < 0.4).astype(float)
    masks = [jaccard_mask(x, eps) for eps in (0.0, 0.1, 0.25, 0.5)]
    for loose, strict in zip(masks, masks[1:]):
        assert (strict <= loose).all()

    m = jaccard_mask(np.array([[1, 0], [1, 0], [0, 1]]), 0.0)
    assert m[0, 1] == 1.0 and m[0, 2] == 0.0


def test_ppr_with_a_high_restart_stays_home():
    cycle = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    ppr = ppr_topk(gcn_normalize(cycle.dense_adjacency()), 0.99, 4)
    assert (ppr[~np.eye(4, dtype=bool)] < 0.01).all()
    assert (np.diag(ppr) > 0.98).all()
    np.testing.assert_allclose(ppr_topk(np.array([[1.0]]), 0.5, 1), [[1.0]])
