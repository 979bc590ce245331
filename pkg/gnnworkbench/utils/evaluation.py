#!/usr/bin/python

"""Robustness curves, envelopes, RAUC, transfer scoring and attack statistics"""

from dataclasses import dataclass
import logging
import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph

from gnnworkbench.utils.attacks import LOCAL_BUCKETS, POISON_SEED_OFFSET, poison_eval, poison_seed
from gnnworkbench.utils.common import ArchiveError, NumericError
from gnnworkbench.utils.gnn import Model, ModelConfig, accuracy, jaccard_similarity, predict
from gnnworkbench.utils.graph import DataSplit, EdgeFlipSet, Graph, apply_flips, dataset_checksum
from gnnworkbench.utils.training import train

logger = logging.getLogger("gnnworkbench")

GLOBAL_GRID = (0.0, 0.01, 0.025, 0.05, 0.075, 0.10, 0.15)
LOCAL_GRID = (0.0, 0.25, 0.5, 1.0, 1.5, 2.0)
LOCAL_SPAN = 2.0

RESULT_COLUMNS = [
    "dataset",
    "scope",
    "mode",
    "model",
    "attack",
    "budget",
    "seed",
    "target",
    "metric",
    "value",
]


@dataclass(frozen=True, eq=False)
class RobustnessCurve:
    """Piecewise-linear map from budget fraction to accuracy"""

    budgets: np.ndarray
    accuracies: np.ndarray
    scope: str = "global"

    def __post_init__(self):
        b = np.asarray(self.budgets, dtype=np.float64)
        a = np.asarray(self.accuracies, dtype=np.float64)
        if b.shape != a.shape or b.ndim != 1 or not len(b):
            raise ValueError("A curve needs matching, non-empty budget and accuracy vectors")
        if np.any(np.diff(b) <= 0):
            raise ValueError(f"Curve budgets must be strictly increasing, got {b.tolist()}")
        if a.min() < 0 or a.max() > 1:
            raise ValueError("Curve accuracies must lie in [0, 1]")
        if self.scope not in ("global", "local"):
            raise ValueError(f"Unknown scope '{self.scope}'")
        object.__setattr__(self, "budgets", b)
        object.__setattr__(self, "accuracies", a)

    def at(self, budgets) -> np.ndarray:
        return np.interp(np.asarray(budgets, dtype=np.float64), self.budgets, self.accuracies)

    def to_list(self) -> list:
        return [[float(b), float(a)] for b, a in zip(self.budgets, self.accuracies)]


def curve_from_points(points, scope: str = "global") -> RobustnessCurve:
    """Curve through (budget, accuracy) points; repeated budgets keep the lowest accuracy"""
    points = list(points)
    if not points:
        raise ValueError("No points to build a curve from")
    best: dict[float, float] = {}
    for b, a in points:
        b, a = float(b), float(a)
        best[b] = min(a, best.get(b, np.inf))
    budgets = sorted(best)
    return RobustnessCurve(np.array(budgets), np.array([best[b] for b in budgets]), scope)


def resample(curve: RobustnessCurve, grid) -> RobustnessCurve:
    """Linear interpolation onto `grid`; values beyond the last budget are held"""
    grid = np.asarray(grid, dtype=np.float64)
    return RobustnessCurve(grid, curve.at(grid), curve.scope)


def envelope(curves: list) -> RobustnessCurve:
    """Pointwise minimum of the curves, made monotonically non-increasing"""
    if not curves:
        raise ValueError("envelope() needs at least one curve")
    grid = np.unique(np.concatenate([c.budgets for c in curves]))
    lowest = np.min([c.at(grid) for c in curves], axis=0)
    return RobustnessCurve(grid, np.minimum.accumulate(lowest), curves[0].scope)


def rauc(curve: RobustnessCurve, mlp_accuracy: float, max_budget: float = None) -> float:
    """Area between the curve and the MLP accuracy up to their first crossing.

    Normalized by (1 - mlp_accuracy) * max_budget so that a curve equal to the
    MLP scores 0 and a perfect curve scores 1.

    Args:
        curve (RobustnessCurve): usually an envelope
        mlp_accuracy (float): the graph-agnostic baseline, in (0, 1)
        max_budget (float): integration range; defaults to the curve's last budget

    Returns:
        float: the score in [0, 1]
    """
    if not 0.0 < mlp_accuracy < 1.0:
        raise ValueError(f"MLP accuracy must lie in (0, 1), got {mlp_accuracy}")
    b_max = float(curve.budgets[-1] if max_budget is None else max_budget)
    if b_max <= 0:
        raise ValueError("RAUC needs a positive budget range")

    grid = np.union1d(curve.budgets[curve.budgets < b_max], [0.0, b_max])
    grid = grid[grid >= 0]
    f = curve.at(grid) - mlp_accuracy

    area = 0.0
    for k in range(len(grid) - 1):
        f0, f1 = f[k], f[k + 1]
        width = grid[k + 1] - grid[k]
        if f0 <= 0:
            break
        if f1 >= 0:
            area += 0.5 * (f0 + f1) * width
        else:
            # crossing inside the segment
            area += 0.5 * f0 * width * f0 / (f0 - f1)
            break
    return float(np.clip(area / ((1.0 - mlp_accuracy) * b_max), 0.0, 1.0))


def local_auc(curve: RobustnessCurve, span: float = LOCAL_SPAN) -> float:
    """Trapezoidal area under the fraction-correct curve, normalized by `span`"""
    grid = np.union1d(curve.budgets[curve.budgets < span], [0.0, span])
    grid = grid[grid >= 0]
    return float(np.trapz(curve.at(grid), grid) / span)


# --------------------------------------------------------------------------
# scoring flips against models


def evasion_accuracy(model: Model, graph: Graph, flips: EdgeFlipSet, split: DataSplit) -> float:
    logits = predict(model, apply_flips(graph, flips))
    return accuracy(logits, graph.labels, split.test)


def evasion_target_correct(model: Model, graph: Graph, flips: EdgeFlipSet, target: int) -> bool:
    logits = predict(model, apply_flips(graph, flips))
    return bool(int(np.argmax(logits[target])) == graph.labels[target])


def poisoning_accuracy(
    config: ModelConfig, graph: Graph, flips: EdgeFlipSet, split: DataSplit, offset: int = POISON_SEED_OFFSET
) -> float:
    return poison_eval(flips, config, graph, split, poison_seed(split.seed, offset))["accuracy"]


def check_checksum(records: list, graph: Graph):
    expected = graph.checksum or dataset_checksum(graph)
    for k, r in enumerate(records):
        if r["checksum"] != expected:
            raise ArchiveError(
                f"Record {k} was made on dataset {r['checksum'][:12]}, not {expected[:12]}; refusing to score"
            )


def transfer_scores(
    records: list,
    target: str,
    config: ModelConfig,
    graph: Graph,
    splits: dict,
    mode: str = "evasion",
    models: dict = None,
    offset: int = POISON_SEED_OFFSET,
) -> pd.DataFrame:
    """Accuracy of one target model under every global record's flips.

    Args:
        records (list): archive records; only those of `mode` are scored
        target (str): name of the target model
        config (ModelConfig): the target's configuration
        splits (dict): split seed -> DataSplit
        mode (str): 'evasion' reuses the trained models, 'poisoning' retrains
        models (dict): split seed -> trained target model; trained on demand
        offset (int): poisoning seed offset

    Returns:
        pd.DataFrame: columns source, attack, budget, seed, accuracy. Every
        scored seed also gets a 'clean' row at budget 0.
    """
    if mode not in ("evasion", "poisoning"):
        raise ValueError(f"Unknown mode '{mode}'")
    check_checksum(records, graph)
    models = {} if models is None else models

    def model_for(seed: int) -> Model:
        if seed not in models:
            models[seed] = train(config, graph, splits[seed], seed)
        return models[seed]

    rows, seeds = [], set()
    for r in records:
        if r["scope"] != "global" or r["mode"] != mode or r["split_seed"] not in splits:
            continue
        seed = int(r["split_seed"])
        split = splits[seed]
        flips = EdgeFlipSet.from_list(r["flips"])
        if mode == "evasion":
            acc = evasion_accuracy(model_for(seed), graph, flips, split)
        else:
            acc = poisoning_accuracy(config, graph, flips, split, offset)
        seeds.add(seed)
        rows.append(
            {
                "source": r["source"],
                "attack": r["attack"],
                "budget": float(r["budget"]),
                "seed": seed,
                "accuracy": acc,
            }
        )
    for seed in sorted(seeds):
        if mode == "evasion":
            clean = accuracy(predict(model_for(seed), graph), graph.labels, splits[seed].test)
        else:
            clean = poisoning_accuracy(config, graph, EdgeFlipSet(), splits[seed], offset)
        rows.append({"source": None, "attack": "clean", "budget": 0.0, "seed": seed, "accuracy": clean})
    logger.debug(f"Scored {len(rows)} records against {target} ({mode})")
    return pd.DataFrame(rows, columns=["source", "attack", "budget", "seed", "accuracy"])


def _clean_accuracy(scores: pd.DataFrame, seed: int) -> float:
    clean = scores[(scores["attack"] == "clean") & (scores["seed"] == seed)]
    return float(clean["accuracy"].iloc[0]) if len(clean) else None


def _source_curve(scores: pd.DataFrame, sources: list, seed: int) -> RobustnessCurve:
    sel = scores[scores["source"].isin(sources) & (scores["seed"] == seed)]
    points = list(zip(sel["budget"], sel["accuracy"]))
    clean = _clean_accuracy(scores, seed)
    if clean is not None:
        points.append((0.0, clean))
    return envelope([curve_from_points(points)])


def _mean_curve(curves: list) -> RobustnessCurve:
    grid = np.unique(np.concatenate([c.budgets for c in curves]))
    return RobustnessCurve(grid, np.mean([c.at(grid) for c in curves], axis=0), curves[0].scope)


def _mlp_for(mlp_accuracy, seed: int) -> float:
    if isinstance(mlp_accuracy, dict):
        if seed not in mlp_accuracy:
            raise ValueError(f"No MLP accuracy for split seed {seed}")
        mlp_accuracy = mlp_accuracy[seed]
    if not 0.0 < mlp_accuracy < 1.0:
        logger.warning(f"MLP accuracy {mlp_accuracy} on split seed {seed} leaves no RAUC range; seed skipped")
    return mlp_accuracy


@dataclass
class TransferResult:
    matrix: pd.DataFrame
    verdicts: dict
    diagonal: dict


def transfer_matrix(
    records: list,
    configs: dict,
    graph: Graph,
    splits: dict,
    mlp_accuracy,
    mode: str = "evasion",
    models: dict = None,
    offset: int = POISON_SEED_OFFSET,
) -> TransferResult:
    """RAUC of every target model under every source's flips.

    Args:
        configs (dict): target name -> ModelConfig
        mlp_accuracy: baseline of the RAUC, a float or a dict split seed -> float
        models (dict): target name -> {split seed -> trained model}

    Returns:
        TransferResult: matrix (rows targets, columns sources), verdict per
        target (its minimum RAUC over sources) and whether each target's
        minimum comes from its own adaptive flips
    """
    check_checksum(records, graph)
    sources = sorted(
        {r["source"] for r in records if r["scope"] == "global" and r["mode"] == mode}
    )
    if not sources:
        return TransferResult(pd.DataFrame(), {}, {})

    models = {} if models is None else models
    matrix = pd.DataFrame(index=sorted(configs), columns=sources, dtype=np.float64)
    for target in sorted(configs):
        scores = transfer_scores(
            records, target, configs[target], graph, splits, mode, models.setdefault(target, {}), offset
        )
        for source in sources:
            seeds = [
                s
                for s in sorted(scores.loc[scores["source"] == source, "seed"].unique())
                if 0.0 < _mlp_for(mlp_accuracy, s) < 1.0
            ]
            if seeds:
                matrix.loc[target, source] = np.mean(
                    [
                        rauc(_source_curve(scores, [source], s), _mlp_for(mlp_accuracy, s), max(GLOBAL_GRID))
                        for s in seeds
                    ]
                )

    verdicts = {t: float(matrix.loc[t].min()) for t in matrix.index if matrix.loc[t].notna().any()}
    diagonal = {t: bool(t in sources and matrix.loc[t, t] <= verdicts[t]) for t in verdicts}
    return TransferResult(matrix, verdicts, diagonal)


def ensemble_transfer(
    records: list,
    sources: list,
    target: str,
    config: ModelConfig,
    graph: Graph,
    splits: dict,
    mode: str = "evasion",
    models: dict = None,
    offset: int = POISON_SEED_OFFSET,
) -> RobustnessCurve:
    """Per budget, the strongest flips of any source, averaged over splits"""
    if not sources:
        raise ValueError("An ensemble needs at least one source")
    chosen = [r for r in records if r["source"] in set(sources)]
    scores = transfer_scores(chosen, target, config, graph, splits, mode, models, offset)
    seeds = sorted(scores.loc[scores["source"].isin(sources), "seed"].unique())
    if not seeds:
        raise ValueError(f"No records of sources {sources} for the given splits")
    return _mean_curve([_source_curve(scores, sources, s) for s in seeds])


# --------------------------------------------------------------------------
# attack statistics


def closeness_centrality(adjacency: sp.spmatrix, nodes) -> np.ndarray:
    """Closeness within each node's component, scaled by its reach (Wasserman-Faust)"""
    nodes = np.asarray(nodes, dtype=np.int64)
    n = adjacency.shape[0]
    if n < 2 or not len(nodes):
        return np.zeros(len(nodes))
    dist = csgraph.shortest_path(adjacency, unweighted=True, directed=False, indices=nodes)
    dist = np.atleast_2d(dist)
    finite = np.isfinite(dist)
    reach = finite.sum(axis=1) - 1
    total = np.where(finite, dist, 0.0).sum(axis=1)
    out = np.zeros(len(nodes))
    ok = total > 0
    out[ok] = (reach[ok] / total[ok]) * (reach[ok] / (n - 1))
    return out


def attack_characteristics(graph: Graph, flips: EdgeFlipSet) -> dict:
    """Statistics over the flipped pairs, taken on the clean graph.

    Means over an empty flip set are NaN.
    """
    rows, cols = flips.arrays()
    stats = {"flips": len(flips)}
    if not len(flips):
        return {**stats, **dict.fromkeys(
            ("degree", "closeness", "homophily", "jaccard", "removed"), float("nan")
        )}

    endpoints = np.concatenate([rows, cols])
    a = graph.adjacency
    jaccard = jaccard_similarity(graph.features[endpoints])
    k = len(rows)
    stats.update(
        degree=float(graph.degrees()[endpoints].mean()),
        closeness=float(closeness_centrality(a, endpoints).mean()),
        homophily=float(np.mean(graph.labels[rows] == graph.labels[cols])),
        jaccard=float(np.mean(jaccard[np.arange(k), np.arange(k) + k])),
        removed=float(np.mean(np.asarray(a[rows, cols]).ravel() > 0)),
    )
    return stats


def spectrum_compare(clean, perturbed) -> dict:
    """Singular values, descending, before and after perturbation"""
    clean = clean.toarray() if sp.issparse(clean) else np.asarray(clean, dtype=np.float64)
    perturbed = perturbed.toarray() if sp.issparse(perturbed) else np.asarray(perturbed, dtype=np.float64)
    if clean.shape != perturbed.shape:
        raise ValueError(f"Shapes differ: {clean.shape} vs {perturbed.shape}")
    try:
        s_clean = np.linalg.svd(clean, compute_uv=False)
        s_pert = np.linalg.svd(perturbed, compute_uv=False)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"SVD did not converge: {e}")
    return {"clean": s_clean, "perturbed": s_pert, "difference": s_pert - s_clean}


def degree_bucket(degree: int, scope: str = "global"):
    if scope == "local":
        for name, (lo, hi) in LOCAL_BUCKETS.items():
            if lo <= degree <= hi:
                return name
        return None
    # isolated nodes share the lowest bucket
    return ">=10" if degree >= 10 else str(max(1, int(degree)))


def degree_breakdown(
    graph: Graph,
    broken_at: dict,
    budgets,
    scope: str = "global",
    cumulative: bool = True,
) -> dict:
    """Share of misclassified nodes per degree bucket, per budget.

    Args:
        broken_at (dict): node -> smallest budget at which it is misclassified,
            None if never
        cumulative (bool): count every node broken up to the budget, else
            only nodes broken at exactly that budget

    Returns:
        dict: budget -> {bucket: share}; None where no node is broken
    """
    degrees = graph.degrees()
    out = {}
    for b in budgets:
        counts: dict = {}
        for node, first in broken_at.items():
            if first is None or (first > b if cumulative else first != b):
                continue
            bucket = degree_bucket(int(degrees[node]), scope)
            if bucket is not None:
                counts[bucket] = counts.get(bucket, 0) + 1
        total = sum(counts.values())
        out[b] = {k: v / total for k, v in sorted(counts.items())} if total else None
    return out


# --------------------------------------------------------------------------
# result tables


def envelope_table(results: pd.DataFrame) -> pd.DataFrame:
    """Envelope per (dataset, scope, mode, model, seed) over all attacks, transfers included.

    Global curves take test accuracies; local curves the fraction of targets
    still correct, a target staying broken at larger budgets once broken.
    """
    keys = ["dataset", "scope", "mode", "model", "seed"]
    columns = keys + ["budget", "accuracy"]
    frames = []

    glob = results[(results["scope"] == "global") & (results["metric"] == "accuracy")]
    if len(glob):
        g = glob.groupby(keys + ["budget"], as_index=False)["value"].min()
        g = g.sort_values(keys + ["budget"])
        g["accuracy"] = g.groupby(keys)["value"].cummin()
        frames.append(g[columns])

    loc = results[(results["scope"] == "local") & (results["metric"] == "target_correct")]
    if len(loc):
        per_target = loc.groupby(keys + ["target", "budget"], as_index=False)["value"].min()
        per_target = per_target.sort_values(keys + ["target", "budget"])
        per_target["value"] = per_target.groupby(keys + ["target"])["value"].cummin()
        l = per_target.groupby(keys + ["budget"], as_index=False)["value"].mean()
        l = l.rename(columns={"value": "accuracy"})
        frames.append(l[columns])

    if not frames:
        return pd.DataFrame(columns=columns)
    return pd.concat(frames, ignore_index=True).sort_values(columns[:-1]).reset_index(drop=True)


def score_table(envelopes: pd.DataFrame, mlp_model: str = "MLP") -> pd.DataFrame:
    """RAUC (global) or local AUC per envelope; global rows need the MLP's clean accuracy"""
    keys = ["dataset", "scope", "mode", "model", "seed"]
    rows = []
    for key, group in envelopes.groupby(keys, sort=True):
        dataset, scope, mode, model, seed = key
        if model == mlp_model:
            continue
        curve = RobustnessCurve(group["budget"].to_numpy(), group["accuracy"].to_numpy(), scope)
        if scope == "local":
            score = local_auc(curve)
        else:
            mlp = envelopes[
                (envelopes["dataset"] == dataset)
                & (envelopes["mode"] == mode)
                & (envelopes["model"] == mlp_model)
                & (envelopes["seed"] == seed)
                & (envelopes["budget"] == 0.0)
            ]
            if not len(mlp):
                logger.warning(f"No clean {mlp_model} accuracy for seed {seed}; skipping RAUC of {model}")
                continue
            baseline = float(mlp["accuracy"].iloc[0])
            if not 0.0 < baseline < 1.0:
                logger.warning(f"{mlp_model} accuracy {baseline} on seed {seed} leaves no RAUC range for {model}")
                continue
            score = rauc(curve, baseline, max(GLOBAL_GRID))
        rows.append(dict(zip(keys, key), score=score))
    return pd.DataFrame(rows, columns=keys + ["score"])


def _source_of(attack: str, model: str):
    if attack == "clean":
        return None
    if attack.startswith("transfer:"):
        return attack.split(":")[1]
    return model


def transfer_table(results: pd.DataFrame, mlp_model: str = "MLP") -> pd.DataFrame:
    """Global RAUC of every model per flip source, averaged over seeds.

    The source of a row is the model itself for adaptive attacks and the
    producing model for rows named 'transfer:<source>:<attack>'.

    Returns:
        pd.DataFrame: columns dataset, mode, model, source, rauc, row_min
    """
    columns = ["dataset", "mode", "model", "source", "rauc", "row_min"]
    glob = results[(results["scope"] == "global") & (results["metric"] == "accuracy")]
    if not len(glob):
        return pd.DataFrame(columns=columns)
    glob = glob.assign(source=[_source_of(a, m) for a, m in zip(glob["attack"], glob["model"])])

    rows = []
    for (dataset, mode, model, seed), group in glob.groupby(["dataset", "mode", "model", "seed"]):
        if model == mlp_model:
            continue
        mlp = glob[
            (glob["dataset"] == dataset)
            & (glob["mode"] == mode)
            & (glob["model"] == mlp_model)
            & (glob["seed"] == seed)
            & (glob["attack"] == "clean")
        ]
        if not len(mlp) or not 0.0 < float(mlp["value"].iloc[0]) < 1.0:
            continue
        clean = group[group["attack"] == "clean"]
        clean_points = list(zip(clean["budget"], clean["value"]))
        for source, attacked in group[group["source"].notna()].groupby("source"):
            curve = envelope([curve_from_points(list(zip(attacked["budget"], attacked["value"])) + clean_points)])
            rows.append(
                {
                    "dataset": dataset,
                    "mode": mode,
                    "model": model,
                    "source": source,
                    "seed": seed,
                    "rauc": rauc(curve, float(mlp["value"].iloc[0]), max(GLOBAL_GRID)),
                }
            )
    if not rows:
        return pd.DataFrame(columns=columns)

    table = pd.DataFrame(rows).groupby(["dataset", "mode", "model", "source"], as_index=False)["rauc"].mean()
    lowest = table.groupby(["dataset", "mode", "model"])["rauc"].transform("min")
    table["row_min"] = table["rauc"] <= lowest
    return table[columns].sort_values(columns[:4]).reset_index(drop=True)
