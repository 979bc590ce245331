#!/usr/bin/python

from gnnworkbench.utils.archive import Archive, ArchiveRecord, write_archive
from gnnworkbench.utils.attacks import POISON_SEED_OFFSET, Budget, run_attack
from gnnworkbench.utils.builtin_models import BASELINE_ATTACKS, attack_config, model_config
from gnnworkbench.utils.common import content_hash
from gnnworkbench.utils.evaluation import (
    GLOBAL_GRID,
    evasion_accuracy,
    poisoning_accuracy,
    transfer_matrix,
)
from gnnworkbench.utils.experiment import (
    MODES,
    PREFIX_ALGORITHMS,
    AttackEntry,
    ExperimentConfig,
    load_graph,
)
from gnnworkbench.utils.gnn import accuracy, predict
from gnnworkbench.utils.graph import EdgeFlipSet, Graph, dataset_checksum, make_split
from gnnworkbench.utils.training import train
import logging
import os
import pandas as pd
import tabulate

logger = logging.getLogger("gnnworkbench")

SOURCE = "gcn-untuned"


def non_adaptive_baseline(
    graph: Graph,
    splits: dict,
    budgets=GLOBAL_GRID[1:],
    modes=MODES,
    attacks=BASELINE_ATTACKS,
    memory_gb: float = 8.0,
    offset: int = POISON_SEED_OFFSET,
) -> list:
    """Global attacks against an untuned GCN, keeping per budget the strongest flips.

    Each record is the perturbation that lowered the untuned GCN's accuracy
    the most among all attacks at that budget; applied to another model it
    measures that model's robustness against a non-adaptive attacker.

    Args:
        graph (Graph): the clean graph
        splits (dict): split seed -> DataSplit
        budgets: global budget fractions
        modes: 'evasion' and/or 'poisoning'
        attacks: attack preset names
        memory_gb (float): memory budget of the meta attacks
        offset (int): poisoning seed offset

    Returns:
        list: archive record dicts with source 'gcn-untuned'
    """
    config = model_config(SOURCE)
    checksum = graph.checksum or dataset_checksum(graph)
    budgets = sorted(float(b) for b in budgets)
    entries = [AttackEntry(name=a) for a in attacks]

    records = []
    for seed, split in sorted(splits.items()):
        model = train(config, graph, split, seed)
        clean = {}
        for mode in modes:
            if mode == "evasion":
                clean[mode] = accuracy(predict(model, graph), graph.labels, split.test)
            else:
                clean[mode] = poisoning_accuracy(config, graph, EdgeFlipSet(), split, offset)

        # (mode, budget) -> (accuracy, attack name, flips, delta)
        strongest = {}
        for entry in entries:
            attack = entry.config(seed, memory_gb)
            attack_modes = entry.attack_modes(list(modes))
            if not attack_modes:
                continue
            logger.info(f"Non-adaptive baseline: {entry.name} on {SOURCE} (seed {seed})")

            grid = [Budget.for_graph(graph, b) for b in budgets]
            if attack.algorithm in PREFIX_ALGORITHMS:
                largest = run_attack(attack, [model], graph, split, grid[-1])
                found = [EdgeFlipSet(tuple(largest.sequence[: b.delta])) for b in grid]
            else:
                found = [run_attack(attack, [model], graph, split, b).flips for b in grid]

            for fraction, b, flips in zip(budgets, grid, found):
                for mode in attack_modes:
                    if mode == "evasion":
                        acc = evasion_accuracy(model, graph, flips, split)
                    else:
                        acc = poisoning_accuracy(config, graph, flips, split, offset)
                    best = strongest.get((mode, fraction))
                    if best is None or acc < best[0]:
                        strongest[(mode, fraction)] = (acc, entry.name, flips, b.delta, attack.to_dict())

        for (mode, fraction), (acc, name, flips, delta, attack_dict) in sorted(strongest.items()):
            records.append(
                ArchiveRecord(
                    dataset=graph.name,
                    checksum=checksum,
                    scope="global",
                    mode=mode,
                    source=SOURCE,
                    attack=name,
                    budget=fraction,
                    delta=delta,
                    split_seed=int(seed),
                    flips=flips.to_list(),
                    clean_accuracy=clean[mode],
                    perturbed_accuracy=acc,
                    config_hash=content_hash(attack_dict),
                ).to_dict()
            )
    logger.info(f"Non-adaptive baseline: {len(records)} records")
    return records


def run_baseline(config: ExperimentConfig) -> pd.DataFrame:
    """Non-adaptive RAUC of every model of an experiment.

    Writes baseline_archive.json and baseline.csv to the experiment's output
    directory. When the adaptive scores of a previous `attack` run are
    present in rauc.csv, the table also carries the adaptive RAUC and the gap.

    Returns:
        pd.DataFrame: columns mode, model, nonadaptive_rauc[, adaptive_rauc, gap]
    """
    graph = load_graph(config.dataset)
    splits = {s: make_split(graph, config.split_ratios, s) for s in config.split_seeds}
    records = non_adaptive_baseline(
        graph,
        splits,
        config.budgets["global"],
        config.modes,
        memory_gb=config.meta_memory_gb,
        offset=config.poison_seed_offset,
    )
    os.makedirs(config.out, exist_ok=True)
    write_archive(Archive([ArchiveRecord(**r) for r in records]), os.path.join(config.out, "baseline_archive.json"))

    mlp = model_config(config.mlp_preset)
    configs = {m.name: m.config() for m in config.models}
    rows = []
    for mode in config.modes:
        mlp_accuracy = {}
        for seed, split in splits.items():
            if mode == "evasion":
                mlp_accuracy[seed] = accuracy(predict(train(mlp, graph, split, seed), graph), graph.labels, split.test)
            else:
                mlp_accuracy[seed] = poisoning_accuracy(mlp, graph, EdgeFlipSet(), split, config.poison_seed_offset)
        result = transfer_matrix(records, configs, graph, splits, mlp_accuracy, mode, offset=config.poison_seed_offset)
        for model, value in result.verdicts.items():
            rows.append({"mode": mode, "model": model, "nonadaptive_rauc": value})
    table = pd.DataFrame(rows, columns=["mode", "model", "nonadaptive_rauc"])

    adaptive_path = os.path.join(config.out, "rauc.csv")
    if os.path.exists(adaptive_path) and len(table):
        adaptive = pd.read_csv(adaptive_path)
        adaptive = adaptive[adaptive["scope"] == "global"]
        adaptive = adaptive.groupby(["mode", "model"], as_index=False)["score"].mean()
        adaptive = adaptive.rename(columns={"score": "adaptive_rauc"})
        table = table.merge(adaptive, on=["mode", "model"], how="left")
        table["gap"] = table["nonadaptive_rauc"] - table["adaptive_rauc"]

    table.to_csv(os.path.join(config.out, "baseline.csv"), index=False)
    print(tabulate.tabulate(table.values.tolist(), list(table.columns), floatfmt=".4f"), "\n")
    return table
