#!/usr/bin/python

"""GCN, MLP and the defenses, each with a train, eval and attack forward pass.

Every forward runs on a ValueGraph. In eval mode the inputs are constants; in
attack mode the caller passes a dense flip-probability Var `perturbation` next
to the clean adjacency and each defense builds its relaxed pathway from it.
"""

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from typing import Optional
import hashlib
import json
import logging
import numpy as np
import os

from gnnworkbench.utils.autodiff import ValueGraph, Var
from gnnworkbench.utils.common import ConfigError, NumericError
from gnnworkbench.utils.graph import Graph, gcn_normalize, relax, rw_square_normalize
import gnnworkbench.utils.autodiff as ad

logger = logging.getLogger("gnnworkbench")

MODES = ("train", "eval", "attack")
GLOBAL = -1


@dataclass
class ModelConfig:
    """One row of the hyperparameter table: architecture, defense and training knobs"""

    kind: str = "GCN"
    hidden: list = field(default_factory=lambda: [64])
    dropout: float = 0.5
    # Jaccard-GCN
    jaccard_eps: float = 0.0
    # SVD-GCN
    rank: int = 50
    # RGCN
    gamma: float = 1.0
    beta: float = 5e-4
    var_eps: float = 1e-8
    attack_var_eps: float = 1e-2
    # GNNGuard
    guard_eps: float = 1e-6
    attack_guard_eps: float = 1e-2
    guard_threshold: float = 0.1
    rho_init: float = 0.0
    # Soft-Median-GDC
    temperature: float = 0.5
    ppr_alpha: float = 0.15
    topk: int = 64
    # training
    optimizer: str = "adam"
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 3000
    patience: Optional[int] = 50

    def __post_init__(self):
        self.hidden = [int(h) for h in self.hidden]
        self.validate()

    def validate(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"Unknown model kind '{self.kind}'")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"Hidden sizes must be positive, got {self.hidden}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.rank < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 < self.ppr_alpha < 1.0:
            raise ConfigError(f"ppr_alpha must lie in (0, 1), got {self.ppr_alpha}")
        if self.topk < 1:
            raise ConfigError(f"topk must be >= 1, got {self.topk}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"Unknown optimizer '{self.optimizer}'")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.patience is not None and self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@contextmanager
def _layer(name: str):
    try:
        yield
    except NumericError as e:
        raise NumericError(f"{name}: {e}") from e


def _dropout(h: Var, p: float, rng: np.random.Generator) -> Var:
    if rng is None or p <= 0:
        return h
    keep = (rng.random(h.shape) >= p) / (1.0 - p)
    return h * keep


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def _fingerprint(adjacency: np.ndarray) -> str:
    return hashlib.sha1(np.ascontiguousarray(adjacency, dtype=np.float64).tobytes()).hexdigest()


class Model:
    """Base model. Subclasses implement `_forward`.

    Attributes:
        params (dict): name -> np.ndarray, the trained parameters
        state (dict): name -> np.ndarray, frozen preprocessing of the training graph
        history (dict): per-epoch losses and the chosen epoch, filled by train()
    """

    kind = "Model"

    def __init__(self, config: ModelConfig, n_features: int, n_classes: int, seed: int = 0):
        self.config = config
        self.n_features = n_features
        self.n_classes = n_classes
        self.seed = seed
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.fingerprint = ""
        self.history: dict = {}
        self._cache: dict[tuple, np.ndarray] = {}

    @property
    def sizes(self) -> list:
        return [self.n_features] + list(self.config.hidden) + [self.n_classes]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def init_params(self, rng: np.random.Generator) -> dict:
        params = {}
        for l, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            params[f"W{l}"] = glorot(rng, a, b)
            params[f"b{l}"] = np.zeros((1, b))
        return params

    def preprocess(self, adjacency: np.ndarray, features: np.ndarray) -> None:
        """Freeze the preprocessing state of the training graph"""
        self.fingerprint = _fingerprint(adjacency)

    def _cached(self, tag: str, adjacency: np.ndarray, fn):
        key = (tag, _fingerprint(adjacency))
        if key not in self._cache:
            if len(self._cache) > 8:
                self._cache.clear()
            self._cache[key] = fn(adjacency)
        return self._cache[key]

    @staticmethod
    def _relaxed(vg: ValueGraph, adjacency: np.ndarray, perturbation) -> Var:
        if perturbation is None:
            return vg.constant(adjacency)
        return relax(adjacency, perturbation)

    def _dense_layers(self, params: dict, h: Var, aggregate, rng) -> Var:
        for l in range(self.n_layers):
            with _layer(f"{self.kind} layer {l}"):
                h = aggregate(l, h @ params[f"W{l}"]) + params[f"b{l}"]
                if l < self.n_layers - 1:
                    h = _dropout(ad.relu(h), self.config.dropout, rng)
        return h

    def prepare(self, vg: ValueGraph, adjacency: np.ndarray, perturbation: Var = None) -> dict:
        """Parameter-free part of the forward, e.g. the normalized adjacency.

        It is computed once and shared across the epochs of unrolled training.
        """
        return {}

    def _forward(self, vg, params, prepared, features, mode, rng, meta):
        raise NotImplementedError

    def forward_with_penalty(
        self,
        vg: ValueGraph,
        params: dict,
        adjacency: np.ndarray,
        features: np.ndarray,
        mode: str = "eval",
        perturbation: Var = None,
        rng: np.random.Generator = None,
        meta: bool = False,
        prepared: dict = None,
    ) -> tuple:
        """Logits plus the model's training penalty (None for most kinds)"""
        if mode not in MODES:
            raise ValueError(f"Unknown mode '{mode}'")
        if mode != "train":
            rng = None
        if prepared is None:
            adjacency = np.asarray(
                adjacency.toarray() if hasattr(adjacency, "toarray") else adjacency,
                dtype=np.float64,
            )
            with _layer(f"{self.kind} preprocessing"):
                prepared = self.prepare(vg, adjacency, perturbation)
        return self._forward(vg, params, prepared, features, mode, rng, meta)


class GCN(Model):
    kind = "GCN"

    def prepare(self, vg, adjacency, perturbation=None):
        return {"a": self.propagation(vg, adjacency, perturbation)}

    def _forward(self, vg, params, prepared, features, mode, rng, meta):
        a = prepared["a"]
        return (
            self._dense_layers(params, vg.constant(features), lambda l, z: a @ z, rng),
            None,
        )

    def propagation(self, vg, adjacency, perturbation) -> Var:
        return gcn_normalize(self._relaxed(vg, adjacency, perturbation))


class MLP(Model):
    kind = "MLP"

    def _forward(self, vg, params, prepared, features, mode, rng, meta):
        return self._dense_layers(params, vg.constant(features), lambda l, z: z, rng), None


def jaccard_similarity(features: np.ndarray) -> np.ndarray:
    """Pairwise Jaccard coefficient of the binarized features; 0 for empty rows"""
    b = (np.asarray(features) != 0).astype(np.float64)
    dot = b @ b.T
    count = b.sum(axis=1)
    union = count[:, None] + count[None, :] - dot
    return np.divide(dot, union, out=np.zeros_like(dot), where=union > 0)


def jaccard_mask(features: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """1 where the pair's Jaccard similarity exceeds eps"""
    return (jaccard_similarity(features) > eps).astype(np.float64)


class JaccardGCN(GCN):
    kind = "JaccardGCN"

    def preprocess(self, adjacency, features):
        super().preprocess(adjacency, features)
        self.state["mask"] = jaccard_mask(features, self.config.jaccard_eps)

    def propagation(self, vg, adjacency, perturbation):
        mask = self.state.get("mask")
        if mask is None:
            raise NumericError("JaccardGCN used before preprocess()")
        return gcn_normalize(self._relaxed(vg, adjacency, perturbation) * mask)


def _svd(adjacency: np.ndarray):
    try:
        return np.linalg.svd(np.asarray(adjacency, dtype=np.float64))
    except np.linalg.LinAlgError as e:
        raise NumericError(f"SVD did not converge: {e}")


def low_rank_approx(adjacency: np.ndarray, rank: int) -> np.ndarray:
    """U_r S_r V_r^T from the top-r singular triplets"""
    n = adjacency.shape[0]
    if not 1 <= rank <= n:
        raise ValueError(f"rank must lie in [1, {n}], got {rank}")
    u, s, vt = _svd(adjacency)
    return (u[:, :rank] * s[:rank]) @ vt[:rank]


def svd_subspace_weights(adjacency: np.ndarray, rank: int) -> np.ndarray:
    """W_ij = (P_ii + P_jj) / 2 with P the projection onto the top-r right singular vectors"""
    n = adjacency.shape[0]
    if not 1 <= rank <= n:
        raise ValueError(f"rank must lie in [1, {n}], got {rank}")
    _, s, vt = _svd(adjacency)
    if rank < n and abs(s[rank - 1] - s[rank]) <= 1e-10 * max(1.0, s[0]):
        logger.warning(
            f"Degenerate singular values at rank cutoff {rank}: {s[rank - 1]:.6g} = {s[rank]:.6g}"
        )
    p = np.square(vt[:rank]).sum(axis=0)
    return np.clip((p[:, None] + p[None, :]) / 2.0, 0.0, 1.0)


def _clamped_gcn_normalize(a: Var) -> Var:
    n = a.shape[0]
    a = a + np.eye(n)
    scale = ad.power(ad.clamp(ad.vsum(a, axis=1), lo=1e-12), -0.5)
    return a * ad.reshape(scale, (n, 1)) * ad.reshape(scale, (1, n))


class SvdGCN(GCN):
    kind = "SvdGCN"

    @property
    def rank(self) -> int:
        return self.config.rank

    def _rank_for(self, n: int) -> int:
        if self.rank > n:
            logger.warning(f"SVD rank {self.rank} exceeds n={n}; using {n}")
        return min(self.rank, n)

    def preprocess(self, adjacency, features):
        super().preprocess(adjacency, features)
        r = self._rank_for(adjacency.shape[0])
        self.state["lra"] = low_rank_approx(adjacency, r)
        self.state["weights"] = svd_subspace_weights(adjacency, r)

    def lra(self, adjacency: np.ndarray) -> np.ndarray:
        if "lra" in self.state and _fingerprint(adjacency) == self.fingerprint:
            return self.state["lra"]
        return self._cached(
            "lra", adjacency, lambda a: low_rank_approx(a, self._rank_for(a.shape[0]))
        )

    def propagation(self, vg, adjacency, perturbation):
        if perturbation is None:
            return _clamped_gcn_normalize(vg.constant(self.lra(adjacency)))

        # surrogate: LRA(A) + dA * W, with W and LRA(A) from the clean graph
        if _fingerprint(adjacency) == self.fingerprint:
            weights = self.state["weights"]
        else:
            weights = self._cached(
                "weights",
                adjacency,
                lambda a: svd_subspace_weights(a, self._rank_for(a.shape[0])),
            )
        delta = perturbation * ((1.0 - 2.0 * adjacency) * weights)
        return _clamped_gcn_normalize(delta + self.lra(adjacency))


class RGCN(Model):
    """Gaussian-based GCN: means and variances propagated with
    variance-based attention, sampled during training only.
    """

    kind = "RGCN"

    def init_params(self, rng):
        params = {}
        for l, (a, b) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            params[f"Wm{l}"] = glorot(rng, a, b)
            params[f"Wv{l}"] = glorot(rng, a, b)
        return params

    def prepare(self, vg, adjacency, perturbation=None):
        relaxed = self._relaxed(vg, adjacency, perturbation)
        return {"mean": gcn_normalize(relaxed), "var": rw_square_normalize(relaxed)}

    def _forward(self, vg, params, prepared, features, mode, rng, meta):
        cfg = self.config
        a_mean, a_var = prepared["mean"], prepared["var"]
        eps = cfg.attack_var_eps if (mode == "attack" or meta) else cfg.var_eps

        mean = var = vg.constant(features)
        penalty = None
        for l in range(self.n_layers):
            with _layer(f"{self.kind} layer {l}"):
                m_hat = ad.elu(_dropout(mean, cfg.dropout, rng) @ params[f"Wm{l}"])
                v_hat = ad.relu(_dropout(var, cfg.dropout, rng) @ params[f"Wv{l}"])
                attention = ad.exp(v_hat * -cfg.gamma)
                mean = a_mean @ (m_hat * attention)
                var = a_var @ (v_hat * attention * attention)
                if l == 0:
                    kl = (mean * mean + var - ad.log(var + eps)) * 0.5
                    penalty = ad.vsum(ad.vsum(kl, axis=1) / float(mean.shape[1])) * cfg.beta

        if mode != "train" or rng is None:
            return mean, penalty

        if var.value.min() < 0:
            logger.warning(f"RGCN: clamping negative variance {var.value.min():.3e} at 0")
            var = ad.clamp(var, lo=0.0)
        noise = rng.standard_normal(mean.shape)
        return mean + ad.sqrt(var + eps) * noise, penalty


def gnnguard_reweight(
    hidden: Var,
    adjacency: Var,
    previous: Optional[Var],
    rho: Optional[Var],
    eps: float,
    threshold: float = 0.1,
    detach: bool = False,
) -> Var:
    """Similarity-based reweighting of one GNNGuard layer.

    Args:
        hidden (Var): layer input embeddings
        adjacency (Var): (relaxed) adjacency
        previous (Var): reweighted matrix of the previous layer, None for the first
        rho (Var): smoothing gate; the memory weight is sigmoid(rho)
        eps (float): rows with weight mass below eps are not normalized
        threshold (float): pairs with cosine similarity below it are removed
        detach (bool): exclude the similarity steps from back-propagation

    Returns:
        Var: the reweighted propagation matrix, before GCN normalization
    """
    norm = ad.sqrt(ad.clamp(ad.vsum(hidden * hidden, axis=1, keepdims=True), lo=1e-24))
    unit = hidden / norm
    cosine = unit @ unit.T

    keep = (cosine.value >= threshold).astype(np.float64)
    s = adjacency * cosine * keep
    row = ad.vsum(s, axis=1, keepdims=True)
    small = (row.value < eps).astype(np.float64)
    gamma = s / (row * (1.0 - small) + small)

    count = (gamma.value != 0).sum(axis=1)
    gamma = gamma + np.diag(1.0 / (1.0 + count))
    nonzero = (gamma.value != 0).astype(np.float64)
    gamma = ad.exp(gamma) * nonzero

    if detach:
        gamma = ad.stop_gradient(gamma)
    if previous is None:
        return gamma

    gate = ad.sigmoid(rho)
    return previous * gate + gamma * (1.0 - gate)


def _normalize_no_loops(a: Var) -> Var:
    n = a.shape[0]
    scale = ad.power(ad.clamp(ad.vsum(a, axis=1), lo=1e-12), -0.5)
    return a * ad.reshape(scale, (n, 1)) * ad.reshape(scale, (1, n))


class GNNGuard(Model):
    kind = "GNNGuard"

    def init_params(self, rng):
        params = super().init_params(rng)
        params["rho"] = np.array(self.config.rho_init, dtype=np.float64)
        return params

    def prepare(self, vg, adjacency, perturbation=None):
        return {"relaxed": self._relaxed(vg, adjacency, perturbation)}

    def _forward(self, vg, params, prepared, features, mode, rng, meta):
        cfg = self.config
        relaxed = prepared["relaxed"]
        eps = cfg.attack_guard_eps if (mode == "attack" or meta) else cfg.guard_eps
        detach = mode == "train" and not meta

        h = vg.constant(features)
        omega = None
        for l in range(self.n_layers):
            with _layer(f"{self.kind} layer {l}"):
                omega = gnnguard_reweight(
                    h,
                    relaxed,
                    omega,
                    params["rho"],
                    eps,
                    cfg.guard_threshold,
                    detach,
                )
                h = _normalize_no_loops(omega) @ (h @ params[f"W{l}"]) + params[f"b{l}"]
                if l < self.n_layers - 1:
                    h = _dropout(ad.relu(h), cfg.dropout, rng)
        return h, None


def ppr_topk(adjacency, alpha: float, k: int):
    """alpha (I - (1 - alpha) A')^-1, keeping the k largest entries per row
    rescaled to the row's pre-truncation sum.

    Accepts a normalized numpy matrix or a Var; returns the same kind.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if not isinstance(adjacency, Var):
        vg = ValueGraph()
        return ppr_topk(vg.constant(adjacency), alpha, k).value

    n = adjacency.shape[0]
    ppr = ad.solve(adjacency * -(1.0 - alpha) + np.eye(n), np.eye(n)) * alpha
    if k >= n:
        return ppr

    keep = np.zeros((n, n))
    top = np.argsort(-ppr.value, axis=1, kind="stable")[:, :k]
    keep[np.arange(n)[:, None], top] = 1.0
    kept = ppr * keep
    return kept * (ad.vsum(ppr, axis=1, keepdims=True) / ad.vsum(kept, axis=1, keepdims=True))


def soft_median_aggregate(weights, hidden: Var, temperature: float) -> Var:
    """Row-wise soft median of `hidden` under the propagation weights.

    Each row's weights are multiplied by softmax(-c / (T sqrt(d))), where c is
    the distance of every node to the row's weighted dimension-wise median,
    and rescaled to the row's original weight mass. Distances are taken
    against all nodes, so every pair carries gradient.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    vg = hidden.graph
    a = weights if isinstance(weights, Var) else vg.constant(weights)
    n, d = hidden.shape

    median = ad.weighted_median(a.value, hidden)
    sq = (
        ad.vsum(median * median, axis=1, keepdims=True)
        + ad.reshape(ad.vsum(hidden * hidden, axis=1), (1, n))
        - (median @ hidden.T) * 2.0
    )
    dist = ad.sqrt(ad.clamp(sq, lo=1e-12))

    support = a.value > 0
    shift = np.where(support, dist.value, np.inf).min(axis=1, keepdims=True)
    shift[~np.isfinite(shift)] = 0.0
    score = ad.clamp((dist - shift) * (-1.0 / (temperature * np.sqrt(d))), hi=50.0)

    e = ad.exp(score) * a
    total = ad.vsum(e, axis=1, keepdims=True)
    empty = (total.value <= 0).astype(np.float64)
    w = e * ad.vsum(a, axis=1, keepdims=True) / (total + empty)
    return w @ hidden


class SoftMedianGDC(Model):
    kind = "SoftMedianGDC"

    def preprocess(self, adjacency, features):
        super().preprocess(adjacency, features)
        self.state["ppr"] = self._ppr(adjacency)

    def _ppr(self, adjacency: np.ndarray) -> np.ndarray:
        return ppr_topk(gcn_normalize(adjacency), self.config.ppr_alpha, self.config.topk)

    def propagation(self, vg, adjacency, perturbation) -> Var:
        if perturbation is not None:
            return ppr_topk(
                gcn_normalize(self._relaxed(vg, adjacency, perturbation)),
                self.config.ppr_alpha,
                self.config.topk,
            )
        if "ppr" in self.state and _fingerprint(adjacency) == self.fingerprint:
            return vg.constant(self.state["ppr"])
        # poisoned or perturbed graphs get their own diffusion
        return vg.constant(self._cached("ppr", adjacency, self._ppr))

    def prepare(self, vg, adjacency, perturbation=None):
        return {"a": self.propagation(vg, adjacency, perturbation)}

    def _forward(self, vg, params, prepared, features, mode, rng, meta):
        a = prepared["a"]
        return (
            self._dense_layers(
                params,
                vg.constant(features),
                lambda l, z: soft_median_aggregate(a, z, self.config.temperature),
                rng,
            ),
            None,
        )


MODEL_KINDS = {
    "GCN": GCN,
    "MLP": MLP,
    "JaccardGCN": JaccardGCN,
    "SvdGCN": SvdGCN,
    "RGCN": RGCN,
    "GNNGuard": GNNGuard,
    "SoftMedianGDC": SoftMedianGDC,
}


def build_model(config: ModelConfig, n_features: int, n_classes: int, seed: int = 0) -> Model:
    return MODEL_KINDS[config.kind](config, n_features, n_classes, seed)


def receptive_hops(kind: str, n_layers: int = 2) -> int:
    """Hops around a target whose induced subgraph reproduces its logits exactly.

    GLOBAL (-1) for models whose preprocessing couples all nodes.
    """
    if kind == "MLP":
        return 0
    if kind in ("GCN", "JaccardGCN", "RGCN"):
        return n_layers + 1
    if kind == "GNNGuard":
        return n_layers + 2
    if kind in ("SvdGCN", "SoftMedianGDC"):
        return GLOBAL
    raise ValueError(f"Unknown model kind '{kind}'")


def forward(
    model: Model,
    adjacency,
    features: np.ndarray,
    mode: str = "eval",
    params: dict = None,
    perturbation: Var = None,
    rng: np.random.Generator = None,
    vg: ValueGraph = None,
    meta: bool = False,
) -> Var:
    """Logits n x C as a Var.

    Args:
        params (dict): name -> Var on `vg`. Defaults to the model's trained
            parameters as constants.
        perturbation (Var): dense symmetric flip probabilities; attack mode
            builds each defense's relaxed pathway from it
        rng: dropout and sampling randomness, used in train mode only
        meta (bool): train-mode forward recorded for meta-gradients; the
            defenses use their attack-mode relaxations
    """
    if vg is None:
        if perturbation is not None:
            vg = perturbation.graph
        elif params:
            vg = next(iter(params.values())).graph
        else:
            vg = ValueGraph()
    if params is None:
        params = {k: vg.constant(v) for k, v in model.params.items()}
    logits, _ = model.forward_with_penalty(
        vg, params, adjacency, features, mode, perturbation, rng, meta
    )
    return logits


def predict(model: Model, graph: Graph) -> np.ndarray:
    return forward(model, graph.dense_adjacency(), graph.features).value


def accuracy(logits: np.ndarray, labels: np.ndarray, nodes) -> float:
    nodes = np.asarray(nodes, dtype=np.int64)
    if not len(nodes):
        raise ValueError("Cannot compute accuracy over an empty node set")
    return float(np.mean(np.argmax(logits[nodes], axis=1) == labels[nodes]))


def save_checkpoint(model: Model, directory: str) -> None:
    """JSON manifest plus one little-endian float64 blob per array"""
    os.makedirs(directory, exist_ok=True)

    def dump(prefix: str, arrays: dict) -> list:
        entries = []
        for name in sorted(arrays):
            arr = np.asarray(arrays[name], dtype="<f8")
            filename = f"{prefix}_{name}.bin"
            arr.tofile(os.path.join(directory, filename))
            entries.append({"name": name, "shape": list(arr.shape), "dtype": "<f8", "file": filename})
        return entries

    manifest = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "seed": model.seed,
        "fingerprint": model.fingerprint,
        "params": dump("param", model.params),
        "state": dump("state", model.state),
    }
    with open(os.path.join(directory, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def load_checkpoint(directory: str) -> Model:
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise ConfigError(f"No checkpoint manifest at '{path}'")
    with open(path, "r") as f:
        manifest = json.load(f)

    model = build_model(
        ModelConfig.from_dict(manifest["config"]),
        manifest["n_features"],
        manifest["n_classes"],
        manifest.get("seed", 0),
    )
    model.fingerprint = manifest.get("fingerprint", "")

    def read(entries: list) -> dict:
        out = {}
        for e in entries:
            arr = np.fromfile(os.path.join(directory, e["file"]), dtype=e["dtype"])
            out[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
        return out

    model.params = read(manifest["params"])
    model.state = read(manifest["state"])
    return model
