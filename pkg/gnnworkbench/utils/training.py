#!/usr/bin/python

from dataclasses import dataclass
from typing import Callable, Optional
import logging
import numpy as np

from gnnworkbench.utils.autodiff import ValueGraph, Var
from gnnworkbench.utils.common import (
    ConfigError,
    MemoryBudgetError,
    NumericError,
    TrainingError,
    make_rng,
)
from gnnworkbench.utils.gnn import (
    GNNGuard,
    Model,
    ModelConfig,
    SoftMedianGDC,
    accuracy,
    build_model,
)
from gnnworkbench.utils.graph import DataSplit, Graph
from gnnworkbench.utils.losses import cross_entropy
import gnnworkbench.utils.autodiff as ad

logger = logging.getLogger("gnnworkbench")

GB = 1024**3


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 3000
    patience: Optional[int] = 50
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"Unknown optimizer '{self.optimizer}'")
        if self.lr <= 0:
            raise ConfigError(f"Learning rate must be > 0, got {self.lr}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience is not None and self.patience > self.max_epochs:
            raise ConfigError("patience cannot exceed max_epochs")

    @classmethod
    def from_model(cls, config: ModelConfig, seed: int = 0) -> "TrainConfig":
        return cls(
            optimizer=config.optimizer,
            lr=config.lr,
            weight_decay=config.weight_decay,
            max_epochs=config.max_epochs,
            patience=config.patience,
            seed=seed,
        )


class Adam:
    """Bias-corrected Adam with L2 weight decay added to the gradient"""

    def __init__(self, lr: float, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads[k] + self.weight_decay * p
            self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            m_hat = self.m[k] / (1 - self.b1**self.t)
            v_hat = self.v[k] / (1 - self.b2**self.t)
            out[k] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return out


class SGD:
    def __init__(self, lr: float, weight_decay: float = 0.0):
        self.lr = lr
        self.weight_decay = weight_decay

    def step(self, params: dict, grads: dict) -> dict:
        return {
            k: p - self.lr * (grads[k] + self.weight_decay * p) for k, p in params.items()
        }


def _nll(logits: np.ndarray, labels: np.ndarray, nodes: np.ndarray) -> float:
    z = logits[nodes]
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(nodes)), labels[nodes]].mean())


def train(
    config: ModelConfig,
    graph: Graph,
    split: DataSplit,
    seed: int = 0,
    train_config: TrainConfig = None,
) -> Model:
    """Fit a model on the training nodes with early stopping on validation loss.

    Args:
        config (ModelConfig): the model
        graph (Graph): the (possibly poisoned) training graph
        split (DataSplit): train/val/test nodes
        seed (int): drives initialization and dropout
        train_config (TrainConfig): defaults to the model config's training knobs

    Returns:
        Model: parameters of the epoch with the lowest validation loss
    """
    tc = train_config or TrainConfig.from_model(config, seed)
    if not len(split.train) or not len(split.val):
        raise ValueError("Training needs non-empty train and val sets")

    model = build_model(config, graph.d, graph.num_classes, seed)
    adjacency = graph.dense_adjacency()
    features = graph.features
    labels = graph.labels
    model.preprocess(adjacency, features)

    params = model.init_params(make_rng("init", seed))
    optimizer = (
        Adam(tc.lr, tc.weight_decay)
        if tc.optimizer == "adam"
        else SGD(tc.lr, tc.weight_decay)
    )

    # the propagation is the same every epoch
    try:
        prepared = {k: v.value for k, v in model.prepare(ValueGraph(), adjacency).items()}
    except NumericError as e:
        raise TrainingError(f"{model.kind} preprocessing failed: {e}") from e

    best_loss, best_epoch, best_params, wait = np.inf, -1, params, 0
    train_losses, val_losses = [], []

    for epoch in range(tc.max_epochs):
        try:
            vg = ValueGraph()
            leaves = {k: vg.leaf(v, k) for k, v in params.items()}
            logits, penalty = model.forward_with_penalty(
                vg,
                leaves,
                adjacency,
                features,
                "train",
                rng=make_rng("dropout", seed, epoch),
                prepared=_rebind(prepared, vg),
            )
            loss = cross_entropy(logits, labels, split.train)
            if penalty is not None:
                loss = loss + penalty
            grads = dict(zip(leaves, vg.gradient(loss, list(leaves.values()))))

            val_logits = _evaluate(model, params, prepared, features)
        except NumericError as e:
            raise TrainingError(f"{model.kind} diverged at epoch {epoch}: {e}") from e

        val_loss = _nll(val_logits, labels, split.val)
        train_losses.append(float(loss.value))
        val_losses.append(val_loss)

        if val_loss < best_loss:
            best_loss, best_epoch, best_params, wait = val_loss, epoch, params, 0
        else:
            wait += 1
            if tc.patience is not None and wait >= tc.patience:
                logger.debug(f"{model.kind}: early stop at epoch {epoch}, best {best_epoch}")
                break

        params = optimizer.step(params, grads)

    model.params = {k: np.array(v) for k, v in best_params.items()}
    final = _evaluate(model, model.params, prepared, features)
    model.history = {
        "train_loss": train_losses,
        "val_loss": val_losses,
        "best_epoch": best_epoch,
        "train_accuracy": accuracy(final, labels, split.train),
        "val_accuracy": accuracy(final, labels, split.val),
    }
    logger.debug(
        f"Trained {model.kind} (seed {seed}): best epoch {best_epoch}, "
        f"val acc {model.history['val_accuracy']:.4f}"
    )
    return model


def _rebind(prepared: dict, vg: ValueGraph) -> dict:
    return {k: vg.constant(v) for k, v in prepared.items()}


def _evaluate(model: Model, params: dict, prepared: dict, features: np.ndarray) -> np.ndarray:
    vg = ValueGraph()
    logits, _ = model.forward_with_penalty(
        vg,
        {k: vg.constant(v) for k, v in params.items()},
        None,
        features,
        "eval",
        prepared=_rebind(prepared, vg),
    )
    return logits.value


def meta_memory_estimate(model: Model, n: int, epochs: int) -> int:
    """Bytes recorded by unrolled training, up to a constant factor"""
    widths = model.sizes[1:]
    per_epoch = 24 * n * sum(widths) + 10 * sum(
        a * b for a, b in zip(model.sizes[:-1], model.sizes[1:])
    )
    if isinstance(model, (GNNGuard, SoftMedianGDC)):
        # similarity or distance matrices are rebuilt every layer
        per_epoch += 12 * model.n_layers * n * n
    return 8 * (8 * n * n + epochs * per_epoch)


@dataclass
class MetaResult:
    gradient: np.ndarray
    loss: float
    params: dict


def unrolled_train_grad(
    model: Model,
    adjacency: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    split: DataSplit,
    rows: np.ndarray,
    cols: np.ndarray,
    weights: np.ndarray,
    loss: Callable[[Var], Var],
    lr: float = 1.0,
    epochs: int = 100,
    theta0: dict = None,
    seed: int = 0,
    dropout: bool = True,
    memory_gb: float = 8.0,
) -> MetaResult:
    """Gradient of the attack loss through `epochs` steps of plain SGD.

    The perturbation is the vector `weights` of flip probabilities over the
    candidate pairs (rows[k], cols[k]). Training starts from the fixed `theta0`
    and, with dropout on, draws its masks from generators keyed by
    (seed, epoch), so repeated calls see identical randomness.

    Args:
        model (Model): preprocessed on the clean graph; supplies the family
        loss: callable(logits Var) -> scalar Var, the attack objective
        lr (float): SGD learning rate
        epochs (int): unrolled steps; 0 gives the evasion gradient at theta0

    Returns:
        MetaResult: the gradient w.r.t. `weights`, the attack loss and the
        final parameters
    """
    n = adjacency.shape[0]
    estimate = meta_memory_estimate(model, n, epochs)
    if estimate > memory_gb * GB:
        raise MemoryBudgetError(
            f"Unrolled training needs about {estimate / GB:.1f} GB "
            f"(budget {memory_gb} GB); lower meta_epochs (now {epochs})"
        )

    if theta0 is None:
        theta0 = model.init_params(make_rng("meta-init", seed))

    vg = ValueGraph()
    p = vg.leaf(weights, "perturbation")
    delta = ad.pairs_to_dense(p, rows, cols, n)
    prepared = model.prepare(vg, adjacency, delta)
    params = {k: vg.constant(v) for k, v in theta0.items()}
    decay = model.config.weight_decay

    try:
        for epoch in range(epochs):
            logits, penalty = model.forward_with_penalty(
                vg,
                params,
                adjacency,
                features,
                "train",
                rng=make_rng("meta-dropout", seed, epoch) if dropout else None,
                meta=True,
                prepared=prepared,
            )
            objective = cross_entropy(logits, labels, split.train)
            if penalty is not None:
                objective = objective + penalty
            if decay:
                objective = objective + sum(ad.vsum(w * w) for w in params.values()) * (0.5 * decay)
            grads = vg.gradient(objective, list(params.values()), create_graph=True)
            params = {k: w - g * lr for (k, w), g in zip(params.items(), grads)}

        logits, _ = model.forward_with_penalty(
            vg, params, adjacency, features, "attack", prepared=prepared
        )
        out = loss(logits)
        gradient = vg.gradient(out, p)
    except NumericError as e:
        raise TrainingError(f"Unrolled {model.kind} training failed: {e}") from e

    return MetaResult(
        gradient=gradient,
        loss=float(out.value),
        params={k: np.array(v.value) for k, v in params.items()},
    )
