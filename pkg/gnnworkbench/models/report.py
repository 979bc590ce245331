#!/usr/bin/python

from gnnworkbench.utils.common import WorkbenchError
from gnnworkbench.utils.evaluation import (
    degree_breakdown,
    envelope_table,
    score_table,
    transfer_table,
)
from gnnworkbench.utils.graph import load_dataset
import logging
import os
import pandas as pd
import tabulate

logger = logging.getLogger("gnnworkbench")


def read_results(out: str) -> pd.DataFrame:
    path = os.path.join(out, "results.csv")
    if not os.path.exists(path):
        raise WorkbenchError(f"No result store at '{out}': results.csv is missing")
    df = pd.read_csv(path)
    df["target"] = df["target"].astype("Int64")
    return df


def local_degree_table(results: pd.DataFrame, graph) -> pd.DataFrame:
    """Share of broken targets per degree bucket and budget, per (mode, model, seed)"""
    columns = ["mode", "model", "seed", "budget", "bucket", "share"]
    loc = results[(results["scope"] == "local") & (results["metric"] == "target_correct")]
    rows = []
    for (mode, model, seed), group in loc.groupby(["mode", "model", "seed"]):
        per_target = group.groupby(["target", "budget"])["value"].min().reset_index()
        budgets = sorted(b for b in per_target["budget"].unique() if b > 0)
        broken_at = {}
        for target, t in per_target.groupby("target"):
            broken = t[(t["value"] == 0) & (t["budget"] > 0)]
            broken_at[int(target)] = float(broken["budget"].min()) if len(broken) else None
        for budget, shares in degree_breakdown(graph, broken_at, budgets, "local").items():
            for bucket, share in (shares or {}).items():
                rows.append([mode, model, seed, budget, bucket, share])
    return pd.DataFrame(rows, columns=columns)


def summarize(out: str, mlp_model: str = "MLP") -> dict:
    """Recompute envelopes and scores from the result store and print them.

    Writes envelopes.csv, rauc.csv and transfer.csv, plus degree.csv for
    local results when the store's dataset.json is present.

    Returns:
        dict: table name -> DataFrame
    """
    results = read_results(out)
    envelopes = envelope_table(results)
    scores = score_table(envelopes, mlp_model)
    transfer = transfer_table(results, mlp_model)

    tables = {"envelopes": envelopes, "rauc": scores, "transfer": transfer}
    dataset = os.path.join(out, "dataset.json")
    if os.path.exists(dataset) and (results["scope"] == "local").any():
        tables["degree"] = local_degree_table(results, load_dataset(dataset))

    for name, df in tables.items():
        df.to_csv(os.path.join(out, f"{name}.csv"), index=False)
    logger.debug(f"Wrote {', '.join(tables)} tables to '{out}'")

    if len(scores):
        summary = scores.groupby(["scope", "mode", "model"])["score"].agg(["mean", "std"]).reset_index()
        print(tabulate.tabulate(summary.values.tolist(), list(summary.columns), floatfmt=".4f"), "\n")
    if len(transfer):
        matrix = transfer.pivot_table(index=["mode", "model"], columns="source", values="rauc")
        print(tabulate.tabulate(matrix, headers="keys", floatfmt=".4f"), "\n")
    return tables
