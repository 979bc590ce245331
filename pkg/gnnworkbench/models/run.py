#!/usr/bin/python

from gnnworkbench.utils.archive import ArchiveRecord
from gnnworkbench.utils.attacks import (
    AttackConfig,
    Budget,
    poison_eval,
    poison_seed,
    run_attack,
    select_local_targets,
)
from gnnworkbench.utils.builtin_models import model_config
from gnnworkbench.utils.common import Stats, backup_path, content_hash
from gnnworkbench.utils.evaluation import (
    RESULT_COLUMNS,
    evasion_accuracy,
    evasion_target_correct,
)
from gnnworkbench.utils.experiment import PREFIX_ALGORITHMS, ExperimentConfig, load_graph
from gnnworkbench.utils.gnn import ModelConfig, load_checkpoint, predict, save_checkpoint
from gnnworkbench.utils.graph import EdgeFlipSet, load_dataset, make_split, save_dataset
from gnnworkbench.utils.training import train
import gnnworkbench.models.report
import gnnworkbench.models.score
import json
import logging
import multiprocessing as mp
import numpy as np
import os
import pandas as pd
import queue
import signal
import sys
import tabulate
import time
import traceback

logger = logging.getLogger("gnnworkbench")

HEADERS: list = [
    "attack",
    "elapsed",
    "tot_cells",
    "period_cells",
    "mean(s)",
    "p50(s)",
    "p90(s)",
    "pMax(s)",
]

ROW_KEY = [c for c in RESULT_COLUMNS if c != "value"]


def signal_handler(sig, frame):
    """Handles Ctrl+C events gracefully,
    stopping the workers and flushing the completed cells to disk.

    Args:
        sig (_type_):
        frame (_type_):
    """
    global pool
    global store
    logger.info("KeyboardInterrupt signal detected. Stopping processes...")

    if pool is not None:
        pool.stop(timeout=5)

    logger.info("Writing the completed cells")
    if store is not None:
        store.write()
    __print_stats()
    sys.exit(0)


# --------------------------------------------------------------------------
# result store


class ResultStore:
    """Rows, archive records and failures of one output directory.

    Only the main process writes to it.
    """

    def __init__(self, out: str, dataset: str):
        self.out = out
        self.dataset = dataset
        self.cells_dir = os.path.join(out, "cells")
        os.makedirs(self.cells_dir, exist_ok=True)
        self.rows: dict = {}
        self.failures: list = []
        self.cached = 0
        self.computed = 0

    def cache_path(self, key: str) -> str:
        return os.path.join(self.cells_dir, f"{key}.json")

    def cached_payload(self, key: str):
        path = self.cache_path(key)
        if not os.path.exists(path):
            return None
        with open(path, "r") as f:
            return json.load(f)["payload"]

    def save(self, key: str, cell: dict, payload: dict) -> None:
        tmp = self.cache_path(key) + ".tmp"
        with open(tmp, "w") as f:
            json.dump({"cell": cell, "payload": payload}, f, sort_keys=True)
        os.replace(tmp, self.cache_path(key))

    def add_rows(self, rows: list) -> None:
        for r in rows:
            row = {"dataset": self.dataset, **r}
            self.rows[tuple(row[c] for c in ROW_KEY)] = row

    def fail(self, cell: dict, error: str) -> None:
        logger.error(f"Cell {_describe(cell)} failed:\n{error}")
        self.failures.append({"cell": _describe(cell), "error": error.strip().splitlines()[-1]})

    def frame(self) -> pd.DataFrame:
        df = pd.DataFrame(list(self.rows.values()), columns=RESULT_COLUMNS)
        df["target"] = df["target"].astype("Int64")
        df["seed"] = df["seed"].astype(int)
        return df.sort_values(ROW_KEY, na_position="first").reset_index(drop=True)

    def write(self) -> None:
        self.frame().to_csv(os.path.join(self.out, "results.csv"), index=False)
        with open(os.path.join(self.out, "failures.json"), "w") as f:
            json.dump(sorted(self.failures, key=lambda x: x["cell"]), f, indent=2)
        gnnworkbench.models.score.export_archive(self.out, os.path.join(self.out, "archive.json"))


def _describe(cell: dict) -> str:
    parts = [cell["kind"], cell["model"]]
    for k in ("attack", "source", "mode", "scope", "seed", "aux", "target"):
        if cell.get(k) is not None:
            parts.append(f"{k}={cell[k]}")
    return " ".join(str(p) for p in parts)


# --------------------------------------------------------------------------
# cell execution, in the workers or inline


_state: dict = {}


def _context_graph(ctx: dict):
    key = (ctx["checksum"], tuple(ctx["ratios"]))
    if _state.get("key") != key:
        _state["key"] = key
        _state["graph"] = load_dataset(ctx["dataset"], checksum=ctx["checksum"])
        _state["splits"] = {}
    return _state["graph"]


def _context_split(ctx: dict, seed: int):
    graph = _context_graph(ctx)
    if seed not in _state["splits"]:
        _state["splits"][seed] = make_split(graph, ctx["ratios"], seed)
    return _state["splits"][seed]


def checkpoint_dir(out: str, model: str, seed: int, aux: int = 0) -> str:
    return os.path.join(out, "models", model, str(seed), "main" if aux == 0 else f"aux{aux}")


def _row(scope, mode, model, attack, budget, seed, target, metric, value) -> dict:
    return {
        "scope": scope,
        "mode": mode,
        "model": model,
        "attack": attack,
        "budget": float(budget),
        "seed": int(seed),
        "target": None if target is None else int(target),
        "metric": metric,
        "value": float(value),
    }


def _train_cell(cell: dict, ctx: dict) -> dict:
    graph = _context_graph(ctx)
    split = _context_split(ctx, cell["seed"])
    config = ModelConfig.from_dict(cell["config"])
    model = train(config, graph, split, cell["seed"] + cell["aux"])
    save_checkpoint(model, checkpoint_dir(ctx["out"], cell["model"], cell["seed"], cell["aux"]))

    payload = {"best_epoch": model.history["best_epoch"]}
    if cell["aux"] == 0:
        predictions = {"evasion": np.argmax(predict(model, graph), axis=1).tolist()}
        if "poisoning" in cell["modes"]:
            clean = train(config, graph, split, poison_seed(cell["seed"], ctx["offset"]))
            predictions["poisoning"] = np.argmax(predict(clean, graph), axis=1).tolist()
        payload["predictions"] = predictions
    return payload


def _budget(graph, scope: str, fraction: float, target) -> Budget:
    if scope == "global":
        return Budget.for_graph(graph, fraction)
    return Budget.local(target, fraction, int(graph.degrees()[target]))


def _score(mode, model, config, graph, split, flips, target, ctx, aux_seeds) -> float:
    if mode == "evasion":
        if target is None:
            return evasion_accuracy(model, graph, flips, split)
        return float(evasion_target_correct(model, graph, flips, target))
    out = poison_eval(
        flips,
        config,
        graph,
        split,
        poison_seed(split.seed, ctx["offset"]),
        target,
        aux_seeds=[split.seed + a for a in aux_seeds],
    )
    return out["accuracy"] if target is None else float(out["target_correct"])


def _attack_cell(cell: dict, ctx: dict) -> dict:
    graph = _context_graph(ctx)
    seed, scope, target = cell["seed"], cell["scope"], cell.get("target")
    split = _context_split(ctx, seed)
    config = ModelConfig.from_dict(cell["config"])
    attack = AttackConfig.from_dict(cell["attack_config"])

    model = load_checkpoint(checkpoint_dir(ctx["out"], cell["model"], seed))
    models = [model]
    if attack.algorithm == "pgd":
        models += [
            load_checkpoint(checkpoint_dir(ctx["out"], cell["model"], seed, a))
            for a in attack.aux_seeds
            if a != 0
        ]

    budgets = [_budget(graph, scope, b, target) for b in cell["budgets"]]
    if attack.algorithm in PREFIX_ALGORITHMS:
        largest = run_attack(attack, models, graph, split, budgets[-1])
        results = [
            (b, EdgeFlipSet(tuple(largest.sequence[: b.delta])), largest.stalled) for b in budgets
        ]
    else:
        results = []
        for b in budgets:
            r = run_attack(attack, models, graph, split, b)
            results.append((b, r.flips, r.stalled))

    metric = "accuracy" if scope == "global" else "target_correct"
    rows, records = [], []
    for fraction, (b, flips, stalled) in zip(cell["budgets"], results):
        for mode in cell["modes"]:
            value = _score(mode, model, config, graph, split, flips, target, ctx, attack.aux_seeds)
            rows.append(_row(scope, mode, cell["model"], cell["attack"], fraction, seed, target, metric, value))
            records.append(
                ArchiveRecord(
                    dataset=graph.name,
                    checksum=ctx["checksum"],
                    scope=scope,
                    mode=mode,
                    source=cell["model"],
                    attack=cell["attack"],
                    budget=float(fraction),
                    delta=b.delta,
                    split_seed=seed,
                    flips=flips.to_list(),
                    clean_accuracy=cell["clean"][mode],
                    perturbed_accuracy=value,
                    target=target,
                    config_hash=content_hash(cell["attack_config"]),
                ).to_dict()
            )
        if stalled:
            logger.warning(f"{cell['attack']} stalled on {cell['model']} (seed {seed}, budget {fraction})")
    return {"rows": rows, "records": records}


def _transfer_cell(cell: dict, ctx: dict) -> dict:
    graph = _context_graph(ctx)
    seed, mode = cell["seed"], cell["mode"]
    split = _context_split(ctx, seed)
    config = ModelConfig.from_dict(cell["config"])
    model = load_checkpoint(checkpoint_dir(ctx["out"], cell["model"], seed)) if mode == "evasion" else None

    name = f"transfer:{cell['source']}:{cell['attack']}"
    rows = []
    for fraction, pairs in cell["flips"]:
        flips = EdgeFlipSet.from_list(pairs)
        value = _score(mode, model, config, graph, split, flips, None, ctx, ())
        rows.append(_row("global", mode, cell["model"], name, fraction, seed, None, "accuracy", value))
    return {"rows": rows}


CELL_KINDS = {"train": _train_cell, "attack": _attack_cell, "transfer": _transfer_cell}


def execute_cell(cell: dict, ctx: dict) -> dict:
    return CELL_KINDS[cell["kind"]](cell, ctx)


def worker(
    task_q: mp.Queue,
    result_q: mp.Queue,
    kill_q: mp.Queue,
    kill_q2: mp.Queue,
    ctx: dict,
    log_level: str,
):
    """Process worker: executes cells until it receives a poison pill

    Args:
        task_q (mp.Queue): (key, cell) tuples, None to stop
        result_q (mp.Queue): ("start", key, pid) when a cell begins, then
            ("done", key, cell, payload, error, seconds)
        kill_q (mp.Queue): queue to handle stopping the worker
        kill_q2 (mp.Queue): queue to acknowledge the stop
        ctx (dict): output directory, dataset file and checksum, split ratios
        log_level (str): the logging level
    """
    logger.setLevel(log_level)
    # capture KeyboardInterrupt and do nothing
    signal.signal(signal.SIGINT, signal.SIG_IGN)

    while True:
        # listen for termination messages (poison pill)
        try:
            kill_q.get(block=False)
            logger.debug("Poison pill received")
            kill_q2.put(None)
            return
        except queue.Empty:
            pass

        try:
            task = task_q.get(timeout=0.1)
        except queue.Empty:
            continue
        if task is None:
            return

        key, cell = task
        result_q.put(("start", key, os.getpid()))
        start = time.time()
        try:
            payload = execute_cell(cell, ctx)
            result_q.put(("done", key, cell, payload, None, time.time() - start))
        except Exception:
            result_q.put(("done", key, cell, None, traceback.format_exc(), time.time() - start))


class CellPool:
    """Runs cells on `workers` processes, or inline when workers is 0"""

    def __init__(self, workers: int, ctx: dict, log_level: str, poll: float = 1.0):
        self.workers = workers
        self.poll = poll
        self.ctx = ctx
        self.log_level = log_level
        self.processes: list[mp.Process] = []
        if workers:
            self.task_q = mp.Queue()
            self.result_q = mp.Queue()
            self.kill_q = mp.Queue()
            self.kill_q2 = mp.Queue()
            for _ in range(workers):
                p = mp.Process(
                    target=worker,
                    args=(self.task_q, self.result_q, self.kill_q, self.kill_q2, ctx, log_level),
                )
                logger.debug("Starting a new Process...")
                p.start()
                self.processes.append(p)

    def map(self, cells: list, on_result) -> None:
        """Execute (key, cell) pairs, calling on_result(key, cell, payload, error, seconds)"""
        if not self.workers:
            for key, cell in cells:
                start = time.time()
                try:
                    payload, error = execute_cell(cell, self.ctx), None
                except Exception:
                    payload, error = None, traceback.format_exc()
                on_result(key, cell, payload, error, time.time() - start)
            return

        for task in cells:
            self.task_q.put(task)
        pending = dict(cells)
        running = {}
        while pending:
            try:
                message = self.result_q.get(timeout=self.poll)
            except queue.Empty:
                self._reap(pending, running, on_result)
                continue
            if message[0] == "start":
                _, key, pid = message
                running[pid] = key
                continue
            _, key, cell, payload, error, seconds = message
            running = {pid: k for pid, k in running.items() if k != key}
            if pending.pop(key, None) is not None:
                on_result(key, cell, payload, error, seconds)

    def _reap(self, pending: dict, running: dict, on_result) -> None:
        """Fail the cells held by workers that died without reporting back"""
        alive = 0
        for p in self.processes:
            if p.is_alive():
                alive += 1
                continue
            key = running.pop(p.pid, None)
            cell = pending.pop(key, None) if key is not None else None
            if cell is not None:
                logger.error(f"Worker process {p.pid} died while running a cell")
                on_result(key, cell, None, f"WorkerError: worker process {p.pid} exited with code {p.exitcode}", 0.0)

        if not alive and pending:
            logger.error(f"No worker process left, {len(pending)} cells not run")
            for key, cell in list(pending.items()):
                on_result(key, cell, None, "WorkerError: no worker process left to run the cell", 0.0)
            pending.clear()

    def stop(self, timeout: float = 5) -> None:
        if not self.workers:
            return
        # send the poison pill to each worker
        for _ in self.processes:
            self.kill_q.put(None)

        # wait until all workers return
        start = time.time()
        c = 0
        while c < len(self.processes) and time.time() < start + timeout:
            try:
                self.kill_q2.get(block=False)
                c += 1
            except queue.Empty:
                time.sleep(0.01)
        if c < len(self.processes):
            logger.info("Timeout reached - forcing processes to stop")
            for p in self.processes:
                p.terminate()

    def close(self) -> None:
        if not self.workers:
            return
        for _ in self.processes:
            self.task_q.put(None)
        for p in self.processes:
            p.join()


# --------------------------------------------------------------------------
# the experiment matrix


def _cell_key(cell: dict, ctx: dict) -> str:
    return content_hash(
        {"checksum": ctx["checksum"], "ratios": ctx["ratios"], "offset": ctx["offset"], "cell": cell}
    )


def _run_phase(label: str, cells: list, ctx: dict) -> dict:
    """Run the cells missing from the cache; returns key -> payload for successful cells"""
    global stats
    done, todo = {}, []
    for cell in cells:
        key = _cell_key(cell, ctx)
        payload = store.cached_payload(key)
        if payload is not None:
            done[key] = payload
            store.cached += 1
        else:
            todo.append((key, cell))
    logger.info(f"{label}: {len(cells)} cells, {len(done)} cached, {len(todo)} to run")

    next_print = time.time() + stats.frequency

    def on_result(key, cell, payload, error, seconds):
        nonlocal next_print
        if error is not None:
            store.fail(cell, error)
            return
        store.save(key, cell, payload)
        store.computed += 1
        done[key] = payload
        stats.add_measurement(cell.get("attack") or cell["kind"], seconds)
        if time.time() >= next_print:
            __print_stats()
            stats.new_window()
            next_print = time.time() + stats.frequency

    pool.map(todo, on_result)
    return {k: done[k] for k in (_cell_key(c, ctx) for c in cells) if k in done}


def _train_cells(config: ExperimentConfig, configs: dict) -> list:
    aux_needed = {name: set() for name in configs}
    for entry in config.attacks:
        attack = entry.config()
        if attack.algorithm == "pgd":
            for name in aux_needed:
                if name != config.mlp_name:
                    aux_needed[name] |= {a for a in attack.aux_seeds if a != 0}

    cells = []
    for name in sorted(configs):
        for seed in config.split_seeds:
            for aux in [0] + sorted(aux_needed[name]):
                cells.append(
                    {
                        "kind": "train",
                        "model": name,
                        "config": configs[name].to_dict(),
                        "seed": seed,
                        "aux": aux,
                        "modes": list(config.modes) if aux == 0 else [],
                    }
                )
    return cells


def _clean_tables(config, graph, splits, configs, trained) -> tuple:
    """Clean rows, clean accuracies and local targets from the primary models' predictions"""
    rows, clean, targets = [], {}, {}
    for name in sorted(configs):
        for seed in config.split_seeds:
            payload = trained.get((name, seed))
            if payload is None:
                continue
            split = splits[seed]
            predictions = {m: np.asarray(p) for m, p in payload["predictions"].items()}
            correct = {m: p == graph.labels for m, p in predictions.items()}
            for mode in config.modes:
                acc = float(np.mean(correct[mode][split.test]))
                clean[(name, seed, mode)] = acc
                rows.append(_row("global", mode, name, "clean", 0.0, seed, None, "accuracy", acc))

            if name == config.mlp_name or not any(a.scope == "local" for a in config.attacks):
                continue
            buckets = select_local_targets(
                graph,
                split,
                seed,
                correct=correct["evasion"],
                per_bucket=config.local.get("per_bucket", 20),
            )
            chosen = sorted(int(t) for nodes in buckets.values() for t in nodes)
            targets[(name, seed)] = chosen
            for t in chosen:
                for mode in config.modes:
                    ok = float(correct[mode][t])
                    clean[(name, seed, mode, t)] = ok
                    rows.append(_row("local", mode, name, "clean", 0.0, seed, t, "target_correct", ok))
    return rows, clean, targets


def _attack_cells(config, configs, clean, targets, trained) -> list:
    cells = []
    for name in sorted(configs):
        if name == config.mlp_name:
            continue
        for entry in config.attacks:
            modes = entry.attack_modes(config.modes)
            if not modes:
                continue
            grid = list(config.budgets[entry.scope])
            for seed in config.split_seeds:
                if (name, seed) not in trained:
                    continue
                attack = entry.config(seed, config.meta_memory_gb)
                groups = [grid] if attack.algorithm in PREFIX_ALGORITHMS else [[b] for b in grid]
                scope_targets = [None] if entry.scope == "global" else targets.get((name, seed), [])
                for target in scope_targets:
                    suffix = () if target is None else (target,)
                    for budgets in groups:
                        cells.append(
                            {
                                "kind": "attack",
                                "model": name,
                                "config": configs[name].to_dict(),
                                "attack": entry.name,
                                "attack_config": attack.to_dict(),
                                "scope": entry.scope,
                                "budgets": budgets,
                                "seed": seed,
                                "target": target,
                                "modes": modes,
                                "clean": {m: clean[(name, seed, m) + suffix] for m in modes},
                            }
                        )
    return cells


def _transfer_cells(config, configs, records) -> list:
    grouped: dict = {}
    for r in records:
        if r["scope"] != "global":
            continue
        key = (r["source"], r["attack"], r["split_seed"], r["mode"])
        grouped.setdefault(key, []).append([r["budget"], r["flips"]])

    cells = []
    for (source, attack, seed, mode), flips in sorted(grouped.items()):
        for name in sorted(configs):
            if name in (source, config.mlp_name):
                continue
            cells.append(
                {
                    "kind": "transfer",
                    "model": name,
                    "config": configs[name].to_dict(),
                    "source": source,
                    "attack": attack,
                    "seed": seed,
                    "mode": mode,
                    "flips": sorted(flips),
                }
            )
    return cells


def run_experiment(
    config: ExperimentConfig,
    resume: bool = True,
    log_level: str = "INFO",
) -> dict:
    """Execute the model x attack x budget x split matrix.

    Phase 1 trains every model (and PGD's auxiliary models) per split, phase
    2 runs the adaptive attacks, phase 3 transfers each global attack's flips
    to every other model. Completed cells are cached by content hash, so a
    rerun only executes what is missing. A failing cell is logged and
    recorded in failures.json; the rest of the matrix still runs.

    Args:
        config (ExperimentConfig): the experiment
        resume (bool): reuse the cell cache of `config.out`; otherwise the
            existing output directory is renamed first
        log_level (str): logging level of the workers

    Returns:
        dict: cell counts (total, cached, computed, failed)
    """
    global stats
    global pool
    global store

    logger.setLevel(log_level)
    out = config.out
    if not resume:
        backup_path(out)
    os.makedirs(out, exist_ok=True)

    graph = load_graph(config.dataset)
    dataset_path = os.path.join(out, "dataset.json")
    checksum = save_dataset(graph, dataset_path)
    with open(os.path.join(out, "experiment.json"), "w") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True, default=str)

    ctx = {
        "out": out,
        "dataset": dataset_path,
        "checksum": checksum,
        "ratios": [float(r) for r in config.split_ratios],
        "offset": int(config.poison_seed_offset),
    }
    splits = {s: make_split(graph, ctx["ratios"], s) for s in config.split_seeds}
    configs = {m.name: m.config() for m in config.models}
    configs[config.mlp_name] = model_config(config.mlp_preset)

    signal.signal(signal.SIGINT, signal_handler)
    stats = Stats(config.frequency, config.prom_port)
    store = ResultStore(out, graph.name)
    pool = CellPool(config.workers, ctx, log_level)

    try:
        cells = _train_cells(config, configs)
        payloads = _run_phase("Training", cells, ctx)
        trained = {}
        for cell in cells:
            key = _cell_key(cell, ctx)
            if cell["aux"] == 0 and key in payloads:
                trained[(cell["model"], cell["seed"])] = payloads[key]
        total = len(cells)

        rows, clean, targets = _clean_tables(config, graph, splits, configs, trained)
        store.add_rows(rows)

        cells = _attack_cells(config, configs, clean, targets, trained)
        payloads = _run_phase("Attacks", cells, ctx)
        records = []
        for payload in payloads.values():
            store.add_rows(payload["rows"])
            records.extend(payload["records"])
        total += len(cells)

        if config.transfer and len(config.models) > 1:
            cells = _transfer_cells(config, configs, records)
            payloads = _run_phase("Transfers", cells, ctx)
            for payload in payloads.values():
                store.add_rows(payload["rows"])
            total += len(cells)
    finally:
        pool.close()

    store.write()
    gnnworkbench.models.report.summarize(out, config.mlp_name)
    __print_stats()

    summary = {
        "cells": total,
        "cached": store.cached,
        "computed": store.computed,
        "failed": len(store.failures),
    }
    logger.info(
        f"Experiment '{config.name}' done: {summary['cells']} cells, {summary['cached']} cached, "
        f"{summary['computed']} computed, {summary['failed']} failed"
    )
    if store.failures:
        print(tabulate.tabulate([[f["cell"], f["error"]] for f in store.failures], ["failed cell", "error"]), "\n")
    return summary


stats = None
pool = None
store = None


def __print_stats():
    if stats is not None and stats.window_stats:
        print(tabulate.tabulate(stats.calculate_stats(), HEADERS), "\n")
