#!/usr/bin/python

from gnnworkbench.utils.archive import Archive, parse_record, read_archive, write_archive
from gnnworkbench.utils.attacks import POISON_SEED_OFFSET
from gnnworkbench.utils.builtin_models import model_config
from gnnworkbench.utils.common import ArchiveError
from gnnworkbench.utils.evaluation import poisoning_accuracy, transfer_matrix
from gnnworkbench.utils.experiment import load_graph
from gnnworkbench.utils.gnn import accuracy, load_checkpoint, predict
from gnnworkbench.utils.graph import DEFAULT_RATIOS, EdgeFlipSet, make_split
from gnnworkbench.utils.training import train
import glob
import json
import logging
import os
import tabulate

logger = logging.getLogger("gnnworkbench")


def _record_key(r) -> tuple:
    return (
        r.source,
        r.attack,
        r.scope,
        r.mode,
        r.split_seed,
        -1 if r.target is None else r.target,
        r.budget,
    )


def export_archive(out: str, path: str) -> Archive:
    """Collect the archive records of every cached attack cell of `out` into `path`

    Args:
        out (str): the experiment output directory
        path (str): the archive file to write

    Returns:
        Archive: the exported archive
    """
    records = []
    for cell_file in sorted(glob.glob(os.path.join(out, "cells", "*.json"))):
        with open(cell_file, "r") as f:
            payload = json.load(f)["payload"]
        for k, doc in enumerate(payload.get("records", [])):
            records.append(parse_record(doc, k))

    archive = Archive(sorted(records, key=_record_key))
    write_archive(archive, path)
    return archive


def _candidate(model: str, graph):
    """(name, config, {seed: trained model}) from a preset name or a checkpoint directory"""
    if os.path.isdir(model):
        trained = load_checkpoint(model)
        if trained.n_features != graph.d or trained.n_classes != graph.num_classes:
            raise ArchiveError(
                f"Checkpoint '{model}' expects {trained.n_features} features and {trained.n_classes} classes; "
                f"the dataset has {graph.d} and {graph.num_classes}"
            )
        parts = os.path.normpath(model).split(os.sep)
        # <out>/models/<name>/<seed>/main as written by run_experiment
        name = parts[-3] if len(parts) >= 3 and parts[-1] == "main" else parts[-1]
        return name, trained.config, {trained.seed: trained}
    return model, model_config(model), {}


def _mlp_accuracy(mlp_preset: str, graph, splits: dict, mode: str, offset: int) -> dict:
    config = model_config(mlp_preset)
    out = {}
    for seed, split in splits.items():
        if mode == "evasion":
            mlp = train(config, graph, split, seed)
            out[seed] = accuracy(predict(mlp, graph), graph.labels, split.test)
        else:
            out[seed] = poisoning_accuracy(config, graph, EdgeFlipSet(), split, offset)
    return out


def import_and_score(
    archive_path: str,
    model: str,
    dataset,
    threshold: float = None,
    mode: str = "evasion",
    split_seeds: list = None,
    split_ratios=DEFAULT_RATIOS,
    mlp_preset: str = "mlp",
    offset: int = POISON_SEED_OFFSET,
) -> dict:
    """Robustness unit test: replay an archive against a candidate model.

    Every global record of `mode` is applied to the candidate; the envelope
    of each source's flips gives one RAUC per source. The candidate fails
    when any source's RAUC falls below the claimed threshold.

    Args:
        archive_path (str): the archive file
        model (str): a model preset name, or a checkpoint directory
        dataset: dataset path or document, as in an experiment config
        threshold (float): claimed RAUC; no verdict without it
        mode (str): 'evasion' or 'poisoning'
        split_seeds (list): splits to score; defaults to the archive's seeds,
            or the checkpoint's seed
        split_ratios: train/val/test ratios of the experiment that made the archive
        mlp_preset (str): preset of the RAUC baseline
        offset (int): poisoning seed offset of the experiment

    Returns:
        dict: model, mode, rauc per source, min_rauc, worst_source, verdict
    """
    if mode not in ("evasion", "poisoning"):
        raise ValueError(f"Unknown mode '{mode}'")
    graph = load_graph(dataset)
    archive = read_archive(archive_path, checksum=graph.checksum)
    records = [r for r in archive.as_dicts() if r["scope"] == "global" and r["mode"] == mode]
    if not records:
        raise ArchiveError(f"Archive '{archive_path}' has no global {mode} records")

    name, config, trained = _candidate(model, graph)
    if split_seeds is None:
        seeds = sorted(trained) if trained else sorted({r["split_seed"] for r in records})
    else:
        seeds = sorted(set(split_seeds))
    if trained and mode == "evasion" and set(seeds) - set(trained):
        raise ArchiveError(
            f"Checkpoint '{model}' was trained on split seed {sorted(trained)}, cannot score seeds {seeds}"
        )
    splits = {s: make_split(graph, split_ratios, s) for s in seeds}

    mlp = _mlp_accuracy(mlp_preset, graph, splits, mode, offset)
    result = transfer_matrix(records, {name: config}, graph, splits, mlp, mode, {name: trained}, offset)
    if name not in result.verdicts:
        raise ArchiveError(f"No archive record matches split seeds {seeds}")

    per_source = {s: float(v) for s, v in result.matrix.loc[name].dropna().items()}
    worst = min(per_source, key=per_source.get)
    lowest = per_source[worst]
    verdict = None if threshold is None else ("FAIL" if lowest < threshold else "PASS")

    rows = [[s, round(v, 4), "<" if threshold is not None and v < threshold else ""] for s, v in sorted(per_source.items())]
    print(tabulate.tabulate(rows, ["source", "rauc", ""]), "\n")
    logger.info(f"{name} ({mode}): min RAUC {lowest:.4f} from {worst}" + (f", verdict {verdict}" if verdict else ""))
    return {
        "model": name,
        "mode": mode,
        "rauc": per_source,
        "min_rauc": lowest,
        "worst_source": worst,
        "verdict": verdict,
    }
