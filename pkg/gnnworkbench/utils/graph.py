#!/usr/bin/python

"""Graph and split data model, dataset files and adjacency normalizations"""

from dataclasses import dataclass, field
from functools import cached_property
import hashlib
import json
import logging
import numpy as np
import os
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from gnnworkbench.utils.autodiff import Var
from gnnworkbench.utils.common import DatasetError, SplitError, make_rng
import gnnworkbench.utils.autodiff as ad

logger = logging.getLogger("gnnworkbench")

DEFAULT_RATIOS = (0.1, 0.1, 0.8)


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph.

    The clean adjacency is stored sparsely and never mutated;
    perturbed graphs are new instances built by apply_flips().
    """

    adjacency: sp.csr_matrix
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "graph"
    checksum: str = ""

    def __post_init__(self):
        a = sp.csr_matrix(self.adjacency, dtype=np.float64)
        a.eliminate_zeros()
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(
            self, "features", np.asarray(self.features, dtype=np.float64)
        )
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))

        n = a.shape[0]
        if a.shape != (n, n):
            raise DatasetError(f"adjacency: expected a square matrix, got {a.shape}")
        if a.diagonal().any():
            raise DatasetError(
                f"adjacency: self-loop on node {int(np.flatnonzero(a.diagonal())[0])}"
            )
        if (a != a.T).nnz:
            raise DatasetError("adjacency: asymmetric adjacency")
        if a.nnz and not np.all(a.data == 1.0):
            raise DatasetError("adjacency: entries must be binary")
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DatasetError(
                f"features: expected {n} rows, got shape {self.features.shape}"
            )
        if self.labels.shape != (n,):
            raise DatasetError(f"labels: expected {n} entries, got {self.labels.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DatasetError(f"labels: values must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def m(self) -> int:
        return self.adjacency.nnz // 2

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel().astype(np.int64)

    @cached_property
    def _dense(self) -> np.ndarray:
        a = self.adjacency.toarray()
        a.setflags(write=False)
        return a

    def dense_adjacency(self) -> np.ndarray:
        """Read-only dense copy of the adjacency"""
        return self._dense

    def edge_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Upper-triangle edges (i<j), sorted lexicographically"""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        return upper.row[order].astype(np.int64), upper.col[order].astype(np.int64)

    def neighbors(self, i: int) -> np.ndarray:
        a = self.adjacency
        return np.sort(a.indices[a.indptr[i] : a.indptr[i + 1]]).astype(np.int64)

    def hop_neighborhood(self, nodes, hops: int) -> np.ndarray:
        """Nodes within `hops` hops of any of `nodes`, the nodes included"""
        reached = np.zeros(self.n, dtype=bool)
        reached[np.asarray(nodes, dtype=np.int64)] = True
        frontier = reached.copy()
        for _ in range(hops):
            frontier = (self.adjacency @ frontier.astype(np.float64)) > 0
            frontier &= ~reached
            if not frontier.any():
                break
            reached |= frontier
        return np.flatnonzero(reached)

    def subgraph(self, nodes) -> "Graph":
        nodes = np.asarray(nodes, dtype=np.int64)
        return Graph(
            adjacency=self.adjacency[nodes][:, nodes],
            features=self.features[nodes],
            labels=self.labels[nodes],
            num_classes=self.num_classes,
            name=self.name,
        )


@dataclass(frozen=True)
class DataSplit:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(
                self, name, np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            )
        union = np.concatenate([self.train, self.val, self.test])
        if len(np.unique(union)) != len(union):
            raise SplitError("train, val and test sets must be disjoint")


@dataclass(frozen=True)
class EdgeFlipSet:
    """Sorted set of unordered node pairs (i<j) whose adjacency entries are toggled"""

    pairs: tuple = ()

    def __post_init__(self):
        normalized = []
        for i, j in self.pairs:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"Cannot flip the diagonal entry ({i}, {i})")
            normalized.append((min(i, j), max(i, j)))
        if len(set(normalized)) != len(normalized):
            raise ValueError("Duplicate pairs in flip set")
        object.__setattr__(self, "pairs", tuple(sorted(normalized)))

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __contains__(self, pair):
        return (min(pair), max(pair)) in set(self.pairs)

    def issubset(self, other: "EdgeFlipSet") -> bool:
        return set(self.pairs) <= set(other.pairs)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        a = np.asarray(self.pairs, dtype=np.int64)
        return a[:, 0], a[:, 1]

    def to_list(self) -> list:
        return [list(p) for p in self.pairs]

    @classmethod
    def from_list(cls, pairs: list) -> "EdgeFlipSet":
        return cls(tuple(tuple(p) for p in pairs))

    @classmethod
    def from_mask(cls, rows, cols, mask) -> "EdgeFlipSet":
        mask = np.asarray(mask, dtype=bool)
        return cls(tuple(zip(np.asarray(rows)[mask], np.asarray(cols)[mask])))


@dataclass
class RelaxedPerturbation:
    """Flip probabilities over a fixed list of candidate pairs (i<j)"""

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray = None
    n: int = 0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        if self.weights is None:
            self.weights = np.zeros(len(self.rows))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not self.n:
            self.n = int(max(self.rows.max(initial=-1), self.cols.max(initial=-1)) + 1)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        out[self.rows, self.cols] = self.weights
        out[self.cols, self.rows] = self.weights
        return out

    def relaxed_adjacency(self, adjacency: np.ndarray) -> np.ndarray:
        return relax(adjacency, self.to_dense())


def relax(adjacency, perturbation):
    """A + (1 - 2A) * P. Works on numpy arrays and on Vars"""
    if isinstance(adjacency, sp.spmatrix):
        adjacency = adjacency.toarray()
    if isinstance(perturbation, RelaxedPerturbation):
        perturbation = perturbation.to_dense()
    if isinstance(perturbation, Var):
        return perturbation * (1.0 - 2.0 * np.asarray(adjacency)) + np.asarray(adjacency)
    return adjacency + (1.0 - 2.0 * adjacency) * perturbation


def _symmetric_scale(adjacency, power: float, perturbation=None):
    if perturbation is not None:
        adjacency = relax(adjacency, perturbation)
    elif isinstance(adjacency, sp.spmatrix):
        adjacency = adjacency.toarray()

    n = adjacency.shape[0]
    if isinstance(adjacency, Var):
        a = adjacency + np.eye(n)
        scale = ad.power(ad.vsum(a, axis=1), power)
        return a * ad.reshape(scale, (n, 1)) * ad.reshape(scale, (1, n))

    a = np.asarray(adjacency, dtype=np.float64) + np.eye(n)
    scale = np.power(a.sum(axis=1), power)
    return a * scale[:, None] * scale[None, :]


def gcn_normalize(adjacency, perturbation=None):
    """(D+I)^-1/2 (A+I) (D+I)^-1/2, dense.

    Args:
        adjacency: numpy/scipy matrix, or a Var holding a relaxed adjacency
        perturbation: optional RelaxedPerturbation, dense array or Var of flip
            probabilities applied to `adjacency` first

    Returns:
        np.ndarray, or a Var when any input is a Var
    """
    return _symmetric_scale(adjacency, -0.5, perturbation)


def rw_square_normalize(adjacency, perturbation=None):
    """(D+I)^-1 (A+I) (D+I)^-1, used to propagate variances"""
    return _symmetric_scale(adjacency, -1.0, perturbation)


def apply_flips(graph: Graph, flips: EdgeFlipSet) -> Graph:
    if not len(flips):
        return graph
    rows, cols = flips.arrays()
    if rows.min() < 0 or max(rows.max(), cols.max()) >= graph.n:
        raise IndexError(f"Flip pair index out of range for a graph with {graph.n} nodes")

    toggle = sp.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(graph.n, graph.n)
    )
    toggle = toggle + toggle.T
    a = graph.adjacency
    flipped = (a + toggle - 2 * a.multiply(toggle)).tocsr()
    flipped.eliminate_zeros()

    return Graph(
        adjacency=flipped,
        features=graph.features,
        labels=graph.labels,
        num_classes=graph.num_classes,
        name=graph.name,
    )


def candidate_pairs(
    graph: Graph, scope: str = "global", target: int = None, radius: int = 2
) -> tuple[np.ndarray, np.ndarray]:
    """Attackable node pairs (i<j), sorted lexicographically.

    Args:
        scope (str): 'global' returns every pair. 'local' returns the pairs with
            at least one endpoint within `radius` hops of `target`.
    """
    if scope == "global":
        return tuple(a.astype(np.int64) for a in np.triu_indices(graph.n, k=1))
    if scope != "local":
        raise ValueError(f"Unknown scope '{scope}'")
    if target is None:
        raise ValueError("A local scope needs a target node")

    near = np.zeros(graph.n, dtype=bool)
    near[graph.hop_neighborhood([target], radius)] = True
    rows, cols = np.triu_indices(graph.n, k=1)
    keep = near[rows] | near[cols]
    return rows[keep].astype(np.int64), cols[keep].astype(np.int64)


def make_split(graph: Graph, ratios=DEFAULT_RATIOS, seed: int = 0) -> DataSplit:
    """Random train/val/test split with set sizes round(n * ratio)"""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"Split ratios must be three positive numbers summing to 1, got {ratios}")
    if graph.n < 3:
        raise SplitError(f"Cannot split a graph with {graph.n} nodes")

    sizes = [int(np.round(graph.n * r)) for r in ratios]
    sizes[2] = min(sizes[2], graph.n - sizes[0] - sizes[1])
    if min(sizes) < 1:
        raise SplitError(f"Split sizes {sizes} leave an empty set for n={graph.n}")

    perm = make_rng("split", seed).permutation(graph.n)
    a, b = sizes[0], sizes[0] + sizes[1]
    return DataSplit(perm[:a], perm[a:b], perm[b : b + sizes[2]], seed=seed)


# --------------------------------------------------------------------------
# dataset files


def serialize_dataset(graph: Graph) -> bytes:
    """Canonical JSON bytes of a graph; the dataset checksum is their SHA-256"""
    rows, cols = graph.edge_pairs()
    fr, fc = np.nonzero(graph.features)
    doc = {
        "name": graph.name,
        "n": graph.n,
        "m": graph.m,
        "num_classes": graph.num_classes,
        "edges": [[int(i), int(j)] for i, j in zip(rows, cols)],
        "features": {
            "shape": [graph.n, graph.d],
            "nonzeros": [
                [int(i), int(j), float(graph.features[i, j])] for i, j in zip(fr, fc)
            ],
        },
        "labels": [int(x) for x in graph.labels],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()


def dataset_checksum(graph: Graph) -> str:
    return hashlib.sha256(serialize_dataset(graph)).hexdigest()


def _field(doc: dict, key: str, kind):
    if key not in doc:
        raise DatasetError(f"{key}: missing field")
    if not isinstance(doc[key], kind):
        raise DatasetError(f"{key}: expected {kind.__name__}, got {type(doc[key]).__name__}")
    return doc[key]


def parse_dataset(doc: dict, name: str = "graph") -> Graph:
    """Build a Graph from the JSON container document"""
    if not isinstance(doc, dict):
        raise DatasetError("dataset: expected a JSON object")

    n = _field(doc, "n", int)
    num_classes = _field(doc, "num_classes", int)
    edges = _field(doc, "edges", list)
    features = _field(doc, "features", dict)
    labels = _field(doc, "labels", list)

    if "m" in doc and doc["m"] != len(edges):
        raise DatasetError(f"m: declared {doc['m']} but {len(edges)} edges listed")
    if len(labels) != n:
        raise DatasetError(f"labels: declared n={n} but {len(labels)} labels listed")

    try:
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    except (ValueError, TypeError):
        raise DatasetError("edges: expected a list of [i, j] integer pairs")
    if len(e):
        if e.min() < 0 or e.max() >= n:
            raise DatasetError(f"edges: node index out of range [0, {n})")
        loops = e[e[:, 0] == e[:, 1]]
        if len(loops):
            raise DatasetError(f"edges: self-loop on node {int(loops[0, 0])}")
        if np.any(e[:, 0] > e[:, 1]):
            raise DatasetError("edges: pairs must be listed as [i, j] with i < j")
        if len(np.unique(e, axis=0)) != len(e):
            raise DatasetError("edges: duplicate pairs")

    shape = _field(features, "shape", list)
    nonzeros = _field(features, "nonzeros", list)
    if len(shape) != 2 or shape[0] != n:
        raise DatasetError(f"features.shape: expected [{n}, d], got {shape}")
    x = np.zeros(shape, dtype=np.float64)
    if nonzeros:
        try:
            nz = np.asarray(nonzeros, dtype=np.float64).reshape(-1, 3)
        except (ValueError, TypeError):
            raise DatasetError("features.nonzeros: expected [row, col, value] triples")
        r, c = nz[:, 0].astype(np.int64), nz[:, 1].astype(np.int64)
        if r.min() < 0 or r.max() >= shape[0] or c.min() < 0 or c.max() >= shape[1]:
            raise DatasetError("features.nonzeros: index out of range")
        x[r, c] = nz[:, 2]

    a = sp.csr_matrix(
        (np.ones(len(e)), (e[:, 0], e[:, 1])) if len(e) else ([], ([], [])),
        shape=(n, n),
    )
    return Graph(
        adjacency=a + a.T,
        features=x,
        labels=np.asarray(labels),
        num_classes=num_classes,
        name=doc.get("name", name),
    )


def load_dataset(path: str, format: str = "json", checksum: str = None) -> Graph:
    """Load a dataset file into a Graph with its checksum recorded.

    Args:
        path (str): the dataset file
        format (str): 'json' (the documented container) or 'npz' (sparse
            citation-dataset layout)
        checksum (str): expected checksum; a mismatch raises DatasetError

    Returns:
        Graph: the validated graph
    """
    if not os.path.exists(path):
        raise DatasetError(f"Dataset file '{path}' does not exist")

    name = os.path.splitext(os.path.basename(path))[0]
    if format == "npz":
        graph = convert_npz(path)
    elif format == "json":
        with open(path, "r") as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as e:
                raise DatasetError(f"Malformed JSON in '{path}': {e}")
        graph = parse_dataset(doc, name)
    else:
        raise DatasetError(f"Unknown dataset format '{format}'")

    digest = dataset_checksum(graph)
    if checksum is not None and checksum != digest:
        raise DatasetError(
            f"Checksum mismatch for '{path}': expected {checksum}, got {digest}"
        )

    graph = Graph(
        adjacency=graph.adjacency,
        features=graph.features,
        labels=graph.labels,
        num_classes=graph.num_classes,
        name=graph.name,
        checksum=digest,
    )
    logger.info(
        f"Loaded dataset '{graph.name}': n={graph.n}, m={graph.m}, d={graph.d}, C={graph.num_classes}"
    )
    return graph


def save_dataset(graph: Graph, path: str) -> str:
    """Write the canonical JSON container and return its checksum"""
    data = serialize_dataset(graph)
    with open(path, "wb") as f:
        f.write(data)
    return hashlib.sha256(data).hexdigest()


def convert_npz(path: str) -> Graph:
    """Read the sparse .npz layout of the citation datasets.

    The adjacency is symmetrized and binarized and self-loops are dropped.
    Missing attributes become identity features.
    """
    with np.load(path, allow_pickle=False) as loader:
        keys = set(loader.files)

        def csr(prefix: str) -> sp.csr_matrix:
            return sp.csr_matrix(
                (
                    loader[f"{prefix}_data"],
                    loader[f"{prefix}_indices"],
                    loader[f"{prefix}_indptr"],
                ),
                shape=tuple(loader[f"{prefix}_shape"]),
            )

        if not {"adj_data", "adj_indices", "adj_indptr", "adj_shape"} <= keys:
            raise DatasetError(f"{path}: missing adj_* arrays")
        adjacency = csr("adj")
        if "attr_data" in keys:
            features = csr("attr").toarray()
        elif "attr_matrix" in keys:
            features = loader["attr_matrix"]
        else:
            features = np.eye(adjacency.shape[0])
        if "labels" not in keys:
            raise DatasetError(f"{path}: missing labels")
        labels = loader["labels"]

    adjacency = adjacency + adjacency.T
    adjacency.setdiag(0)
    adjacency.eliminate_zeros()
    adjacency.data[:] = 1.0

    _, labels = np.unique(labels, return_inverse=True)
    return Graph(
        adjacency=adjacency,
        features=features,
        labels=labels,
        num_classes=int(labels.max()) + 1 if len(labels) else 0,
        name=os.path.splitext(os.path.basename(path))[0],
    )


def largest_component(graph: Graph) -> Graph:
    """Restrict a graph to its largest connected component, nodes renumbered in order"""
    count, component = csgraph.connected_components(graph.adjacency, directed=False)
    if count <= 1:
        return graph
    keep = np.flatnonzero(component == np.argmax(np.bincount(component)))
    logger.info(f"Keeping the largest of {count} components: {len(keep)} of {graph.n} nodes")
    return graph.subgraph(keep)
