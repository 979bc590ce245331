#!/usr/bin/python

import logging
import numpy as np

from gnnworkbench.utils.common import make_rng
from gnnworkbench.utils.graph import Graph
import scipy.sparse as sp

logger = logging.getLogger("gnnworkbench")


class SimpleSbm:
    """Pseudo-random stochastic block model graphs
    based on numpy's default Generator.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng: np.random.Generator = make_rng("sbm", seed)

    class Abc:
        def __init__(self, rng: np.random.Generator):
            self.rng = rng

    class Identity(Abc):
        """One-hot node features"""

        def __init__(self, rng: np.random.Generator):
            super().__init__(rng)

        def __call__(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
            return np.eye(len(labels))

    class OneHotClass(Abc):
        """Noisy one-hot class indicator, `noise` being the flip probability per entry"""

        def __init__(self, rng: np.random.Generator, noise: float = 0.0):
            super().__init__(rng)
            self.noise = noise

        def __call__(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
            x = np.eye(num_classes)[labels]
            flip = self.rng.random(x.shape) < self.noise
            return np.abs(x - flip)

    class Bernoulli(Abc):
        """Binary bag-of-words-like features.

        Each block owns `dim // num_classes` prototype dimensions that are on
        with probability `p_on`; every other dimension is on with `p_off`.
        """

        def __init__(
            self,
            rng: np.random.Generator,
            dim: int = 32,
            p_on: float = 0.3,
            p_off: float = 0.02,
        ):
            super().__init__(rng)
            self.dim = dim
            self.p_on = p_on
            self.p_off = p_off

        def __call__(self, labels: np.ndarray, num_classes: int) -> np.ndarray:
            width = max(1, self.dim // max(1, num_classes))
            probs = np.full((len(labels), self.dim), self.p_off)
            for c in range(num_classes):
                cols = np.arange(c * width, min((c + 1) * width, self.dim))
                probs[np.ix_(labels == c, cols)] = self.p_on
            return (self.rng.random(probs.shape) < probs).astype(np.float64)

    FEATURES = {
        "identity": Identity,
        "onehot": OneHotClass,
        "bernoulli": Bernoulli,
    }

    def generate(
        self,
        blocks: list,
        p_in: float,
        p_out: float,
        features: dict = None,
    ) -> Graph:
        if not blocks:
            raise ValueError("Parameter 'blocks' is empty.")
        if any(int(b) < 1 for b in blocks):
            raise ValueError(f"Block sizes must be positive, got {blocks}")
        for p in (p_in, p_out):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"Probabilities must lie in [0, 1], got {p}")

        features = dict(features or {"kind": "bernoulli"})
        kind = features.pop("kind", "bernoulli")
        if kind not in self.FEATURES:
            raise ValueError(f"Unknown feature model '{kind}'")

        labels = np.repeat(np.arange(len(blocks)), [int(b) for b in blocks])
        n = len(labels)

        rows, cols = np.triu_indices(n, k=1)
        probs = np.where(labels[rows] == labels[cols], p_in, p_out)
        keep = self.rng.random(len(rows)) < probs
        upper = sp.csr_matrix(
            (np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(n, n)
        )

        x = self.FEATURES[kind](self.rng, **features)(labels, len(blocks))

        graph = Graph(
            adjacency=upper + upper.T,
            features=x,
            labels=labels,
            num_classes=len(blocks),
            name=f"sbm-{self.seed}",
        )
        logger.debug(f"Generated SBM n={graph.n}, m={graph.m}, d={graph.d}")
        return graph


def generate_sbm(
    blocks: list,
    p_in: float,
    p_out: float,
    features: dict = None,
    seed: int = 0,
) -> Graph:
    """Stochastic block model graph, identical for identical seeds.

    Args:
        blocks (list): block sizes; block index is the node label
        p_in (float): edge probability within a block
        p_out (float): edge probability across blocks
        features (dict): feature model, e.g. {"kind": "bernoulli", "dim": 32}
        seed (int): the seed

    Returns:
        Graph: the generated graph
    """
    return SimpleSbm(seed).generate(blocks, p_in, p_out, features)
