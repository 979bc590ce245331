#!/usr/bin/python

from gnnworkbench.utils.archive import read_archive
from gnnworkbench.utils.common import backup_path, get_based_name_dir
from gnnworkbench.utils.evaluation import attack_characteristics, spectrum_compare
from gnnworkbench.utils.experiment import load_graph
from gnnworkbench.utils.graph import apply_flips, largest_component, load_dataset, save_dataset
from gnnworkbench.utils.synthetic import generate_sbm
import logging
import os
import pandas as pd
import tabulate

logger = logging.getLogger("gnnworkbench")


def util_convert(input: str, output: str = None, lcc: bool = False) -> str:
    """Ingest a .npz or .json dataset into the canonical JSON container.

    Returns:
        str: the checksum of the written container
    """
    fmt = "npz" if str(input).endswith(".npz") else "json"
    graph = load_dataset(str(input), fmt)
    if lcc:
        graph = largest_component(graph)

    if not output:
        output = get_based_name_dir(str(input)) + ".json"
    output = str(output)

    # backup the current file as to not override
    backup_path(output)
    checksum = save_dataset(graph, output)
    logger.info(f"Wrote '{output}' (checksum {checksum})")
    return checksum


def util_sbm(
    output: str,
    blocks: list,
    p_in: float,
    p_out: float,
    features: dict = None,
    seed: int = 0,
) -> str:
    """Write a synthetic stochastic block model dataset"""
    graph = generate_sbm(blocks, p_in, p_out, features, seed)
    os.makedirs(os.path.dirname(os.path.abspath(str(output))), exist_ok=True)
    backup_path(str(output))
    checksum = save_dataset(graph, str(output))
    logger.info(
        f"Wrote SBM graph n={graph.n}, m={graph.m}, d={graph.d} to '{output}' (checksum {checksum})"
    )
    return checksum


def util_characteristics(archive: str, dataset, output: str = None) -> pd.DataFrame:
    """Attack characteristic statistics of every archive record"""
    graph = load_graph(dataset)
    records = read_archive(archive, checksum=graph.checksum).records

    rows = []
    for k, r in enumerate(records):
        rows.append(
            {
                "record": k,
                "source": r.source,
                "attack": r.attack,
                "scope": r.scope,
                "mode": r.mode,
                "budget": r.budget,
                "seed": r.split_seed,
                **attack_characteristics(graph, r.flip_set()),
            }
        )
    df = pd.DataFrame(rows)
    if output:
        df.to_csv(output, index=False)
        logger.info(f"Wrote {len(df)} rows to '{output}'")
    if len(df):
        print(tabulate.tabulate(df.values.tolist(), list(df.columns), floatfmt=".4f"), "\n")
    return df


def util_spectrum(archive: str, dataset, record: int, top: int = 10) -> dict:
    """Singular values of the clean and perturbed adjacency of one archive record"""
    graph = load_graph(dataset)
    records = read_archive(archive, checksum=graph.checksum).records
    if not 0 <= record < len(records):
        raise IndexError(f"Record {record} out of range; the archive has {len(records)} records")

    r = records[record]
    perturbed = apply_flips(graph, r.flip_set())
    out = spectrum_compare(graph.adjacency, perturbed.adjacency)

    rows = [
        [k, out["clean"][k], out["perturbed"][k], out["difference"][k]]
        for k in range(min(top, len(out["clean"])))
    ]
    print(f"{r.source} / {r.attack} @ {r.budget} (seed {r.split_seed}, {len(r.flips)} flips)")
    print(tabulate.tabulate(rows, ["k", "clean", "perturbed", "difference"], floatfmt=".4f"), "\n")
    return out

