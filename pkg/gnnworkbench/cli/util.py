#!/usr/bin/python

from gnnworkbench.cli.dep import EPILOG, LogLevel, Param
from pathlib import Path
from typing import List, Optional
import gnnworkbench.models.baseline
import gnnworkbench.models.util
import gnnworkbench.utils.common
import gnnworkbench.utils.experiment
import logging
import sys
import typer
import yaml

logger = logging.getLogger("gnnworkbench")

app = typer.Typer(
    epilog=EPILOG,
    no_args_is_help=True,
    help="Various utils.",
)


@app.command(
    "sbm",
    epilog=EPILOG,
    no_args_is_help=True,
    help="Write a synthetic stochastic block model dataset.",
)
def util_sbm(
    output: Path = typer.Option(
        ...,
        "--output",
        "-o",
        help="Output filepath of the JSON container.",
        file_okay=True,
        dir_okay=False,
        resolve_path=True,
    ),
    blocks: List[int] = typer.Option(
        ..., "--block", "-b", help="Size of one block, repeatable; one class per block."
    ),
    p_in: float = typer.Option(0.1, "--p-in", help="Edge probability within a block."),
    p_out: float = typer.Option(0.01, "--p-out", help="Edge probability across blocks."),
    features: str = typer.Option(
        None,
        "--features",
        "-f",
        show_default=False,
        help='Feature model as a JSON/YAML string, e.g. \'{"kind": "bernoulli", "dim": 32}\'.',
    ),
    seed: int = typer.Option(0, "--seed", "-s", help="The generator seed."),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())

    feature_model = None
    if features:
        feature_model = yaml.safe_load(features)
        if not isinstance(feature_model, dict):
            logger.error(f"The value passed to '--features' has no key:value pairs: '{features}'")
            sys.exit(1)

    try:
        checksum = gnnworkbench.models.util.util_sbm(output, blocks, p_in, p_out, feature_model, seed)
    except (ValueError, TypeError) as e:
        logger.error(e)
        sys.exit(1)
    typer.echo(checksum)


@app.command(
    "baseline",
    epilog=EPILOG,
    no_args_is_help=True,
    help="Score every model of an experiment against the non-adaptive baseline.",
)
def util_baseline(
    config: Optional[Path] = Param.ConfigPath,
    out: Optional[Path] = Param.Out,
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())

    try:
        experiment = gnnworkbench.utils.experiment.load_experiment(str(config))
        if out is not None:
            experiment.out = str(out)
        gnnworkbench.models.baseline.run_baseline(experiment)
    except gnnworkbench.utils.common.WorkbenchError as e:
        logger.error(e)
        sys.exit(1)


@app.command(
    "characteristics",
    epilog=EPILOG,
    no_args_is_help=True,
    help="Attack characteristic statistics of every archive record.",
)
def util_characteristics(
    archive: Optional[Path] = Param.ArchivePath,
    dataset: Optional[Path] = Param.DatasetPath,
    output: Optional[Path] = typer.Option(
        None,
        "--output",
        "-o",
        show_default=False,
        help="Write the statistics to this CSV file.",
    ),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())

    try:
        gnnworkbench.models.util.util_characteristics(
            str(archive), str(dataset), str(output) if output else None
        )
    except gnnworkbench.utils.common.WorkbenchError as e:
        logger.error(e)
        sys.exit(1)


@app.command(
    "spectrum",
    epilog=EPILOG,
    no_args_is_help=True,
    help="Compare the singular values of a record's perturbed graph with the clean graph.",
)
def util_spectrum(
    archive: Optional[Path] = Param.ArchivePath,
    dataset: Optional[Path] = Param.DatasetPath,
    record: int = typer.Option(..., "--record", "-r", help="Index of the archive record."),
    top: int = typer.Option(10, "--top", "-k", help="Number of singular values to print."),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())

    try:
        gnnworkbench.models.util.util_spectrum(str(archive), str(dataset), record, top)
    except (gnnworkbench.utils.common.WorkbenchError, IndexError) as e:
        logger.error(e)
        sys.exit(1)
