#!/usr/bin/python

"""Structure attacks: FGA, PGD, greedy meta, Meta-PGD and greedy brute force.

Every attack works on a list of candidate pairs (i<j) and a vector of flip
probabilities over them. Flipping candidate k toggles A[i, j] and A[j, i].
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Union
import copy
import logging
import numpy as np

from gnnworkbench.utils.autodiff import ValueGraph
from gnnworkbench.utils.common import ConfigError, make_rng
from gnnworkbench.utils.gnn import (
    GLOBAL,
    JaccardGCN,
    Model,
    ModelConfig,
    SvdGCN,
    accuracy,
    forward,
    predict,
    receptive_hops,
)
from gnnworkbench.utils.graph import (
    DataSplit,
    EdgeFlipSet,
    Graph,
    apply_flips,
    candidate_pairs,
)
from gnnworkbench.utils.losses import LOSS_KINDS, attack_loss
from gnnworkbench.utils.training import train, unrolled_train_grad
import gnnworkbench.utils.autodiff as ad

logger = logging.getLogger("gnnworkbench")

ALGORITHMS = ("fga", "pgd", "greedy_meta", "meta_pgd", "brute_force")
META_ALGORITHMS = ("greedy_meta", "meta_pgd")

# degree buckets of the local protocol
LOCAL_BUCKETS = {
    "degree_1": (1, 1),
    "degree_2": (2, 2),
    "degree_3": (3, 3),
    "degree_5": (5, 5),
    "degree_8_to_10": (8, 10),
    "degree_15_to_25": (15, 25),
}
TARGETS_PER_BUCKET = 20

# poisoning retrains with split seed + offset; auxiliary seeds stay below it
POISON_SEED_OFFSET = 10_000


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class Budget:
    """Number of edge flips Δ an attack may spend.

    Global budgets are a fraction of the edge count, local budgets a
    fraction of the target's degree. Any positive fraction allows at least
    one flip.
    """

    delta: int
    fraction: float = 0.0
    scope: str = "global"
    target: Optional[int] = None

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError(f"Budget must be >= 0, got {self.delta}")
        if self.scope not in ("global", "local"):
            raise ValueError(f"Unknown scope '{self.scope}'")
        if self.scope == "local" and self.target is None:
            raise ValueError("A local budget needs a target node")

    @classmethod
    def for_graph(cls, graph: Graph, fraction: float) -> "Budget":
        delta = _round_half_up(fraction * graph.m)
        if fraction > 0:
            delta = max(1, delta)
        return cls(delta, fraction, "global")

    @classmethod
    def local(cls, target: int, fraction: float, degree: int) -> "Budget":
        delta = _round_half_up(fraction * degree)
        if fraction > 0:
            delta = max(1, delta)
        return cls(delta, fraction, "local", int(target))


@dataclass
class AttackConfig:
    algorithm: str = "pgd"
    loss: str = "TLM"
    iterations: int = 200
    base_lr: float = 0.1
    schedule: str = "sqrt"
    samples: int = 100
    grad_clip: Optional[float] = None
    init: Optional[list] = None
    aux_seeds: list = field(default_factory=lambda: [0])
    restarts: int = 1
    stall_tol: float = 1e-9
    meta_lr: float = 1.0
    meta_epochs: int = 100
    meta_dropout: bool = True
    memory_gb: float = 8.0
    svd_threshold: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"Unknown attack algorithm '{self.algorithm}'")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"Unknown attack loss '{self.loss}'")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.samples < 1:
            raise ConfigError(f"samples must be >= 1, got {self.samples}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if self.schedule not in ("sqrt", "constant"):
            raise ConfigError(f"Unknown step schedule '{self.schedule}'")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {self.restarts}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be > 0, got {self.grad_clip}")
        if not self.aux_seeds:
            raise ConfigError("aux_seeds cannot be empty")
        if max(self.aux_seeds) >= POISON_SEED_OFFSET:
            raise ConfigError(f"Auxiliary seeds must stay below {POISON_SEED_OFFSET}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"Unknown attack config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class AttackResult:
    flips: EdgeFlipSet
    loss: float
    stalled: bool = False
    trace: list = field(default_factory=list)
    sequence: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "flips": self.flips.to_list(),
            "loss": self.loss,
            "stalled": self.stalled,
            "trace": list(self.trace),
            "sequence": [list(p) for p in self.sequence],
        }


def attack_candidates(
    model: Model, graph: Graph, scope: str = "global", target: int = None, radius: int = 2
) -> tuple:
    """Candidate pairs, without the pairs a Jaccard filter declares dead"""
    rows, cols = candidate_pairs(graph, scope, target, radius)
    if isinstance(model, JaccardGCN) and "mask" in model.state:
        alive = model.state["mask"][rows, cols] > 0
        rows, cols = rows[alive], cols[alive]
    return rows, cols


def _flipped_adjacency(adjacency: np.ndarray, rows, cols) -> np.ndarray:
    a = np.array(adjacency, dtype=np.float64)
    a[rows, cols] = 1.0 - a[rows, cols]
    a[cols, rows] = a[rows, cols]
    return a


class EvasionObjective:
    """Attack loss of a fixed trained model as a function of the flip probabilities.

    The gradient runs through the model's attack-mode forward; discrete flip
    sets are scored with the unmodified evaluation forward.
    """

    def __init__(
        self,
        model: Model,
        graph: Graph,
        rows: np.ndarray,
        cols: np.ndarray,
        loss: str,
        nodes,
        labels: np.ndarray = None,
    ):
        self.model = model
        self.adjacency = graph.dense_adjacency()
        self.features = graph.features
        self.labels = graph.labels if labels is None else labels
        self.rows, self.cols = rows, cols
        self.loss = loss
        self.nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
        self.n = graph.n

    def value_and_grad(self, weights: np.ndarray) -> tuple:
        vg = ValueGraph()
        p = vg.leaf(weights, "perturbation")
        delta = ad.pairs_to_dense(p, self.rows, self.cols, self.n)
        logits = forward(
            self.model, self.adjacency, self.features, mode="attack", perturbation=delta, vg=vg
        )
        out = attack_loss(self.loss, logits, self.labels, self.nodes)
        return float(out.value), vg.gradient(out, p)

    def logits(self, mask: np.ndarray) -> np.ndarray:
        a = _flipped_adjacency(self.adjacency, self.rows[mask], self.cols[mask])
        return forward(self.model, a, self.features).value

    def evaluate(self, mask: np.ndarray) -> float:
        return attack_loss(self.loss, self.logits(mask), self.labels, self.nodes)


def _ranked(scores: np.ndarray) -> np.ndarray:
    # descending, ties to the smallest candidate index (pairs are sorted)
    return np.argsort(-scores, kind="stable")


def fga(
    model: Model,
    graph: Graph,
    budget: Budget,
    loss: str = "TLM",
    nodes=None,
) -> AttackResult:
    """Flip the Δ pairs with the largest positive gradient at the clean graph"""
    rows, cols = attack_candidates(model, graph, budget.scope, budget.target)
    nodes = _loss_nodes(budget, nodes)
    objective = EvasionObjective(model, graph, rows, cols, loss, nodes)
    clean, grad = objective.value_and_grad(np.zeros(len(rows)))

    if budget.delta == 0:
        return AttackResult(EdgeFlipSet(), clean, trace=[clean])

    order = _ranked(grad)
    chosen = [k for k in order[: budget.delta] if grad[k] > 0]
    if len(chosen) < budget.delta:
        logger.warning(
            f"FGA: only {len(chosen)} of {budget.delta} candidates have a positive gradient"
        )
    mask = np.zeros(len(rows), dtype=bool)
    mask[chosen] = True
    sequence = [(int(rows[k]), int(cols[k])) for k in chosen]
    flips = EdgeFlipSet(tuple(sequence))
    _assert_budget(flips, budget)
    return AttackResult(flips, objective.evaluate(mask), trace=[clean], sequence=sequence)


def project_budget(weights: np.ndarray, delta: float, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Euclidean projection onto {p in [0, 1]^k : sum(p) <= delta}.

    Bisection on the shift mu of clip(weights - mu, 0, 1).
    """
    w = np.asarray(weights, dtype=np.float64)
    if delta <= 0:
        return np.zeros_like(w)
    clipped = np.clip(w, 0.0, 1.0)
    if clipped.sum() <= delta:
        return clipped

    lo, hi = w.min() - 1.0, w.max()
    for _ in range(max_iter):
        mu = (lo + hi) / 2.0
        if np.clip(w - mu, 0.0, 1.0).sum() > delta:
            lo = mu
        else:
            hi = mu
        if hi - lo <= tol:
            break
    return np.clip(w - hi, 0.0, 1.0)


def _top_mask(weights: np.ndarray, delta: int) -> np.ndarray:
    mask = np.zeros(len(weights), dtype=bool)
    order = _ranked(weights)[:delta]
    mask[order[weights[order] > 0]] = True
    return mask


def sample_discrete(
    weights: np.ndarray,
    delta: int,
    samples: int,
    loss_fn: Callable[[np.ndarray], float],
    rng: np.random.Generator,
    retries: int = 10,
) -> tuple:
    """Best of K Bernoulli draws from the flip probabilities, each within budget.

    The deterministic top-Δ rounding is always among the candidates. A draw
    exceeding Δ is redrawn up to `retries` times, then truncated to its Δ
    most probable pairs.

    Args:
        loss_fn: callable(boolean mask over candidates) -> attack loss

    Returns:
        tuple: (boolean mask, loss)
    """
    w = np.clip(np.asarray(weights, dtype=np.float64), 0.0, 1.0)
    if delta <= 0 or not (w > 0).any():
        empty = np.zeros(len(w), dtype=bool)
        return empty, loss_fn(empty)

    scored: dict[bytes, float] = {}
    best_mask, best_loss = None, -np.inf

    def consider(mask: np.ndarray):
        nonlocal best_mask, best_loss
        key = np.packbits(mask).tobytes()
        if key not in scored:
            scored[key] = loss_fn(mask)
        if scored[key] > best_loss:
            best_mask, best_loss = mask, scored[key]

    consider(_top_mask(w, delta))
    for _ in range(samples):
        for _ in range(retries):
            draw = rng.random(len(w)) < w
            if draw.sum() <= delta:
                break
        else:
            draw = _top_mask(np.where(draw, w, 0.0), delta)
        consider(draw)

    logger.debug(f"sample_discrete: {len(scored)} distinct draws, best loss {best_loss:.6f}")
    return best_mask, best_loss


def _loss_nodes(budget: Budget, nodes) -> np.ndarray:
    if budget.scope == "local":
        return np.array([budget.target], dtype=np.int64)
    if nodes is None:
        raise ValueError("A global attack needs the nodes its loss is averaged over")
    return np.asarray(nodes, dtype=np.int64)


def _assert_budget(flips: EdgeFlipSet, budget: Budget):
    assert len(flips) <= budget.delta, f"{len(flips)} flips exceed the budget {budget.delta}"


def _initial_weights(init, rows: np.ndarray, cols: np.ndarray, delta: int) -> np.ndarray:
    w = np.zeros(len(rows))
    if not init:
        return w
    index = {(int(i), int(j)): k for k, (i, j) in enumerate(zip(rows, cols))}
    missing = 0
    for pair in EdgeFlipSet.from_list(init):
        if pair in index:
            w[index[pair]] = 1.0
        else:
            missing += 1
    if missing:
        logger.warning(f"{missing} initial flips are not attack candidates and were dropped")
    return project_budget(w, delta)


def _step_size(config: AttackConfig, delta: int, t: int) -> float:
    if config.schedule == "sqrt":
        return config.base_lr * delta / np.sqrt(t)
    return config.base_lr * delta


def _clip(g: np.ndarray, norm: Optional[float]) -> np.ndarray:
    if norm is None:
        return g
    total = np.linalg.norm(g)
    return g * (norm / total) if total > norm else g


def _stalled(trace: list, window: int, tol: float) -> bool:
    return len(trace) >= window and np.ptp(trace[-window:]) < tol


def _projected_ascent(
    grad_fn: Callable[[np.ndarray, int], tuple],
    w: np.ndarray,
    delta: int,
    config: AttackConfig,
    label: str,
) -> tuple:
    """Gradient ascent with budget projection; returns (best weights, trace, stalled)"""
    trace = []
    best_w, best_loss = w, -np.inf
    window = max(1, config.iterations // 2)
    stalled = False

    for t in range(1, config.iterations + 1):
        loss, g = grad_fn(w, t)
        trace.append(loss)
        if loss > best_loss:
            best_w, best_loss = w, loss
        if _stalled(trace, window, config.stall_tol):
            stalled = True
            logger.warning(f"{label}: loss plateaued at {loss:.6g} after {t} iterations")
            break
        w = project_budget(w + _step_size(config, delta, t) * _clip(g, config.grad_clip), delta)
        if t % 20 == 0:
            logger.debug(f"{label}: iteration {t}, loss {loss:.6f}, mass {w.sum():.3f}")

    return best_w, trace, stalled


def pgd(
    models: Union[Model, list],
    graph: Graph,
    budget: Budget,
    config: AttackConfig,
    nodes=None,
) -> AttackResult:
    """Projected gradient ascent on the flip probabilities, then discrete sampling.

    With several (auxiliary) models, every iteration takes its gradient from
    one of them, drawn uniformly. Sampled flip sets are scored on the first
    model's evaluation forward.
    """
    models = models if isinstance(models, (list, tuple)) else [models]
    rows, cols = attack_candidates(models[0], graph, budget.scope, budget.target)
    nodes = _loss_nodes(budget, nodes)
    objectives = [EvasionObjective(m, graph, rows, cols, config.loss, nodes) for m in models]
    primary = objectives[0]
    empty = np.zeros(len(rows), dtype=bool)
    clean_loss = primary.evaluate(empty)

    if budget.delta == 0 or not len(rows):
        return AttackResult(EdgeFlipSet(), clean_loss)

    best = None
    for restart in range(config.restarts):
        rng = make_rng("pgd", config.seed, budget.delta, budget.target, restart)
        if restart == 0:
            w = _initial_weights(config.init, rows, cols, budget.delta)
        else:
            w = project_budget(rng.random(len(rows)) * (2.0 * budget.delta / len(rows)), budget.delta)

        def grad_fn(w, t):
            k = 0 if len(objectives) == 1 else int(rng.integers(len(objectives)))
            return objectives[k].value_and_grad(w)

        w, trace, stalled = _projected_ascent(grad_fn, w, budget.delta, config, "PGD")
        mask, loss = sample_discrete(w, budget.delta, config.samples, primary.evaluate, rng)
        logger.debug(f"PGD restart {restart}: sampled loss {loss:.6f}")
        if best is None or loss > best[1]:
            best = (mask, loss, trace, stalled)

    mask, loss, trace, stalled = best
    if loss < clean_loss:
        mask, loss = empty, clean_loss

    flips = EdgeFlipSet.from_mask(rows, cols, mask)
    _assert_budget(flips, budget)
    return AttackResult(flips, loss, stalled, trace)


class MetaObjective:
    """Attack loss after unrolled SGD training on the perturbed graph"""

    def __init__(
        self,
        model: Model,
        graph: Graph,
        split: DataSplit,
        rows: np.ndarray,
        cols: np.ndarray,
        config: AttackConfig,
        nodes,
    ):
        self.model = model
        self.graph = graph
        self.split = split
        self.rows, self.cols = rows, cols
        self.config = config
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.adjacency = graph.dense_adjacency()
        # one initialization for the whole attack run
        self.theta0 = model.init_params(make_rng("meta-init", config.seed))
        self.last_params = None

    def _loss(self, logits):
        return attack_loss(self.config.loss, logits, self.graph.labels, self.nodes)

    def value_and_grad(self, weights: np.ndarray) -> tuple:
        result = unrolled_train_grad(
            self.model,
            self.adjacency,
            self.graph.features,
            self.graph.labels,
            self.split,
            self.rows,
            self.cols,
            weights,
            self._loss,
            lr=self.config.meta_lr,
            epochs=self.config.meta_epochs,
            theta0=self.theta0,
            seed=self.config.seed,
            dropout=self.config.meta_dropout,
            memory_gb=self.config.memory_gb,
        )
        self.last_params = result.params
        return result.loss, result.gradient

    def evaluate(self, mask: np.ndarray) -> float:
        """Loss of a discrete flip set under the last unrolled parameters"""
        surrogate = copy.copy(self.model)
        surrogate.params = self.last_params if self.last_params is not None else self.theta0
        a = _flipped_adjacency(self.adjacency, self.rows[mask], self.cols[mask])
        return self._loss(forward(surrogate, a, self.graph.features).value)


def greedy_meta(
    model: Model,
    graph: Graph,
    split: DataSplit,
    budget: Budget,
    config: AttackConfig,
    nodes=None,
) -> AttackResult:
    """Flip one pair per step, the one with the largest meta-gradient.

    Flipped pairs are never flipped back, so the Δ' < Δ attack is a prefix of
    the Δ attack.
    """
    rows, cols = attack_candidates(model, graph, budget.scope, budget.target)
    nodes = _loss_nodes(budget, nodes)
    objective = MetaObjective(model, graph, split, rows, cols, config, nodes)

    w = np.zeros(len(rows))
    sequence, trace = [], []
    for step in range(min(budget.delta, len(rows))):
        loss, g = objective.value_and_grad(w)
        trace.append(loss)
        scores = np.where(w > 0, -np.inf, g)
        k = int(np.argmax(scores))
        w[k] = 1.0
        sequence.append((int(rows[k]), int(cols[k])))
        logger.debug(f"Greedy meta step {step}: flip {sequence[-1]}, loss {loss:.6f}")

    flips = EdgeFlipSet(tuple(sequence))
    _assert_budget(flips, budget)
    final = objective.value_and_grad(w)[0]
    return AttackResult(flips, final, trace=trace, sequence=sequence)


def meta_pgd(
    model: Model,
    graph: Graph,
    split: DataSplit,
    budget: Budget,
    config: AttackConfig,
    nodes=None,
) -> AttackResult:
    """Projected gradient ascent on meta-gradients.

    Sampled flip sets are ranked by the attack loss under the parameters of
    the last unrolled training run.
    """
    rows, cols = attack_candidates(model, graph, budget.scope, budget.target)
    nodes = _loss_nodes(budget, nodes)
    objective = MetaObjective(model, graph, split, rows, cols, config, nodes)
    if budget.delta == 0 or not len(rows):
        # loss after unrolled training on the clean graph, as greedy_meta reports it
        return AttackResult(EdgeFlipSet(), objective.value_and_grad(np.zeros(len(rows)))[0])

    w = _initial_weights(config.init, rows, cols, budget.delta)
    rng = make_rng("meta-pgd", config.seed, budget.delta)

    w, trace, stalled = _projected_ascent(
        lambda w, t: objective.value_and_grad(w), w, budget.delta, config, "Meta-PGD"
    )
    # rank the samples under the parameters trained on the returned weights
    objective.value_and_grad(w)
    mask, loss = sample_discrete(w, budget.delta, config.samples, objective.evaluate, rng)

    flips = EdgeFlipSet.from_mask(rows, cols, mask)
    _assert_budget(flips, budget)
    return AttackResult(flips, loss, stalled, trace)


def _restrict(model: Model, nodes: np.ndarray, n: int) -> Model:
    """Shallow copy whose pairwise preprocessing state covers `nodes` only"""
    sub = copy.copy(model)
    sub.state = {
        k: v[np.ix_(nodes, nodes)] if v.shape == (n, n) else v for k, v in model.state.items()
    }
    sub._cache = {}
    return sub


class _TargetScorer:
    """Target logits after one extra flip, on the smallest exact subgraph"""

    def __init__(self, model: Model, graph: Graph, target: int):
        self.model = model
        self.features = graph.features
        self.target = target
        self.hops = receptive_hops(model.kind, model.n_layers)

    def logits(self, current: Graph, pair: tuple = None) -> np.ndarray:
        a = current.dense_adjacency()
        if self.hops == GLOBAL:
            if pair is not None:
                a = _flipped_adjacency(a, [pair[0]], [pair[1]])
            return forward(self.model, a, self.features).value[self.target]

        nodes = current.hop_neighborhood([self.target], self.hops)
        if pair is not None and self.hops > 0:
            nodes = np.union1d(nodes, current.hop_neighborhood(list(pair), self.hops - 1))
        sub = np.array(a[np.ix_(nodes, nodes)])
        if pair is not None and np.isin(pair, nodes).all():
            i, j = np.searchsorted(nodes, pair)
            sub[i, j] = sub[j, i] = 1.0 - sub[i, j]
        model = _restrict(self.model, nodes, current.n)
        z = forward(model, sub, self.features[nodes]).value
        return z[int(np.searchsorted(nodes, self.target))]


def greedy_brute_force(
    model: Model,
    graph: Graph,
    budget: Budget,
    loss: str = "TLM",
    svd_weights: np.ndarray = None,
    svd_threshold: float = 0.2,
) -> AttackResult:
    """Local attack trying every single flip around the target each round.

    Candidates touch the target's closed one-hop neighborhood. With
    `svd_weights`, pairs weighted below `svd_threshold` are skipped and the
    rest are tried in descending weight order. Stops once the target is
    misclassified.
    """
    if budget.scope != "local":
        raise ValueError("Greedy brute force is a local attack")
    target = budget.target
    label = int(graph.labels[target])
    scorer = _TargetScorer(model, graph, target)

    def score(z: np.ndarray) -> float:
        return attack_loss(loss, z[None, :], np.array([label]), [0])

    def broken(z: np.ndarray) -> bool:
        return int(np.argmax(z)) != label

    rows, cols = attack_candidates(model, graph, "local", target, radius=1)
    order = np.arange(len(rows))
    if svd_weights is not None:
        w = svd_weights[rows, cols]
        order = order[w >= svd_threshold]
        order = order[np.argsort(-w[order], kind="stable")]

    current = graph
    z = scorer.logits(current)
    trace = [score(z)]
    sequence = []
    used = set()

    while len(sequence) < budget.delta and not broken(z):
        best_k, best_loss, best_z = None, -np.inf, None
        for k in order:
            if k in used:
                continue
            pair = (int(rows[k]), int(cols[k]))
            zk = scorer.logits(current, pair)
            lk = score(zk)
            if lk > best_loss:
                best_k, best_loss, best_z = k, lk, zk
        if best_k is None:
            break
        used.add(best_k)
        pair = (int(rows[best_k]), int(cols[best_k]))
        sequence.append(pair)
        current = apply_flips(current, EdgeFlipSet((pair,)))
        z = best_z
        trace.append(best_loss)
        logger.debug(f"Brute force on node {target}: flip {pair}, loss {best_loss:.6f}")

    flips = EdgeFlipSet(tuple(sequence))
    _assert_budget(flips, budget)
    return AttackResult(flips, trace[-1], trace=trace, sequence=sequence)


def select_local_targets(
    graph: Graph, split: DataSplit, seed: int = 0, correct=None, per_bucket: int = TARGETS_PER_BUCKET
) -> dict:
    """Up to `per_bucket` test nodes per degree bucket.

    Args:
        correct: boolean mask of nodes the clean model classifies correctly;
            all test nodes qualify when omitted

    Returns:
        dict: bucket name -> sorted node indices
    """
    degrees = graph.degrees()
    eligible = np.zeros(graph.n, dtype=bool)
    eligible[split.test] = True
    if correct is not None:
        eligible &= np.asarray(correct, dtype=bool)

    rng = make_rng("targets", seed)
    targets = {}
    for name, (lo, hi) in LOCAL_BUCKETS.items():
        pool = np.flatnonzero(eligible & (degrees >= lo) & (degrees <= hi))
        if len(pool) < per_bucket:
            logger.warning(f"Bucket {name}: only {len(pool)} of {per_bucket} targets available")
            chosen = pool
        else:
            chosen = rng.choice(pool, size=per_bucket, replace=False)
        targets[name] = np.sort(chosen).astype(np.int64)
    return targets


def poison_seed(split_seed: int, offset: int = POISON_SEED_OFFSET) -> int:
    return int(split_seed) + int(offset)


def poison_eval(
    flips: EdgeFlipSet,
    config: ModelConfig,
    graph: Graph,
    split: DataSplit,
    seed: int,
    target: int = None,
    aux_seeds=(),
) -> dict:
    """Retrain from scratch on the perturbed graph and score it.

    Returns:
        dict: test accuracy, plus `target_correct` for a local target
    """
    if seed in set(aux_seeds):
        raise ValueError(f"Poisoning seed {seed} collides with an auxiliary seed")
    perturbed = apply_flips(graph, flips)
    model = train(config, perturbed, split, seed)
    logits = predict(model, perturbed)
    out = {"accuracy": accuracy(logits, graph.labels, split.test)}
    if target is not None:
        out["target_correct"] = bool(int(np.argmax(logits[target])) == graph.labels[target])
    return out


def run_attack(
    config: AttackConfig,
    models: list,
    graph: Graph,
    split: DataSplit,
    budget: Budget,
) -> AttackResult:
    """Dispatch one attack run.

    Args:
        models (list): trained models; the first is the attacked one, the
            rest are auxiliaries for multi-model PGD
    """
    nodes = split.test
    model = models[0]
    if config.algorithm == "fga":
        return fga(model, graph, budget, config.loss, nodes)
    if config.algorithm == "pgd":
        return pgd(models, graph, budget, config, nodes)
    if config.algorithm == "greedy_meta":
        return greedy_meta(model, graph, split, budget, config, nodes)
    if config.algorithm == "meta_pgd":
        return meta_pgd(model, graph, split, budget, config, nodes)

    weights = model.state.get("weights") if isinstance(model, SvdGCN) else None
    return greedy_brute_force(model, graph, budget, config.loss, weights, config.svd_threshold)
