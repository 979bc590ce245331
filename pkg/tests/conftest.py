import os

import numpy as np
import pytest
import scipy.sparse as sp

from gnnworkbench.utils.graph import Graph, make_split
from gnnworkbench.utils.synthetic import generate_sbm

CORA_ML = os.path.join(os.path.dirname(__file__), "..", "data", "cora_ml.npz")


def pytest_collection_modifyitems(config, items):
    if os.path.exists(CORA_ML):
        return
    skip = pytest.mark.skip(reason=f"Cora ML not found at {CORA_ML}")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def path_graph(n: int = 4, num_classes: int = 2) -> Graph:
    rows = np.arange(n - 1)
    upper = sp.csr_matrix((np.ones(n - 1), (rows, rows + 1)), shape=(n, n))
    return Graph(
        adjacency=upper + upper.T,
        features=np.eye(n),
        labels=np.arange(n) % num_classes,
        num_classes=num_classes,
        name="path",
    )


@pytest.fixture(scope="session")
def sbm():
    return generate_sbm([12, 12, 12], 0.3, 0.03, {"kind": "bernoulli", "dim": 24}, seed=7)


@pytest.fixture(scope="session")
def tiny():
    return generate_sbm([7, 7], 0.45, 0.08, {"kind": "bernoulli", "dim": 10, "p_on": 0.5}, seed=3)


@pytest.fixture(scope="session")
def sbm_split(sbm):
    return make_split(sbm, (0.2, 0.2, 0.6), seed=0)


@pytest.fixture(scope="session")
def tiny_split(tiny):
    return make_split(tiny, (0.3, 0.2, 0.5), seed=1)


SMALL_SBM = {
    "sbm": {
        "blocks": [10, 10],
        "p_in": 0.4,
        "p_out": 0.05,
        "features": {"kind": "bernoulli", "dim": 16, "p_on": 0.3, "p_off": 0.15},
        "seed": 4,
    }
}


def small_experiment(out: str, **changes) -> dict:
    doc = {
        "name": "small",
        "dataset": SMALL_SBM,
        "models": [
            {
                "name": "gcn",
                "preset": "gcn-untuned",
                "overrides": {"hidden": [8], "max_epochs": 30, "patience": None},
            }
        ],
        "attacks": [{"name": "fga"}],
        "budgets": {"global": [0.05, 0.1]},
        "split_seeds": [0],
        "modes": ["evasion"],
        "transfer": False,
        "workers": 0,
        "out": out,
    }
    doc.update(changes)
    return doc


@pytest.fixture(scope="session")
def small_run(tmp_path_factory):
    """A finished inline run of one GCN against FGA; returns (config, summary)"""
    from gnnworkbench.models.run import run_experiment
    from gnnworkbench.utils.experiment import ExperimentConfig

    out = str(tmp_path_factory.mktemp("small") / "out")
    config = ExperimentConfig.from_dict(small_experiment(out))
    return config, run_experiment(config, log_level="WARNING")
