#!/usr/bin/python

from gnnworkbench.cli.dep import EPILOG, LogLevel, Mode, Param
from .. import __version__
from pathlib import Path
from typing import List, Optional
import gnnworkbench.cli.util
import gnnworkbench.models.report
import gnnworkbench.models.run
import gnnworkbench.models.score
import gnnworkbench.models.util
import gnnworkbench.utils.common
import gnnworkbench.utils.experiment
import logging
import platform
import sys
import typer


logger = logging.getLogger("gnnworkbench")

app = typer.Typer(
    epilog=EPILOG,
    no_args_is_help=True,
    help=f"gnnworkbench v{__version__}: Adaptive attack workbench for GNN defenses.",
)


app.add_typer(gnnworkbench.cli.util.app, name="util")


@app.command(help="Run the experiment matrix.", epilog=EPILOG, no_args_is_help=True)
def attack(
    config: Optional[Path] = Param.ConfigPath,
    out: Optional[Path] = Param.Out,
    workers: int = Param.Workers,
    resume: bool = typer.Option(
        True,
        "--resume/--no-resume",
        help="Skip cells already in the result store; otherwise back the store up and start over.",
    ),
    prom_port: int = Param.Port,
    frequency: int = typer.Option(
        None,
        "-s",
        "--stats-frequency",
        show_default=False,
        help="How often to display the stats in seconds.",
    ),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())
    logger.debug("Executing attack()")

    experiment = __load(config, out, workers, prom_port, frequency)
    try:
        summary = gnnworkbench.models.run.run_experiment(
            experiment, resume=resume, log_level=log_level.upper()
        )
    except gnnworkbench.utils.common.WorkbenchError as e:
        logger.error(e)
        sys.exit(1)

    if summary["failed"]:
        logger.warning(f"{summary['failed']} cells failed; see '{experiment.out}/failures.json'")


@app.command(
    help="Unit test a model against a robustness archive.",
    epilog=EPILOG,
    no_args_is_help=True,
)
def score(
    archive: Optional[Path] = Param.ArchivePath,
    model: str = typer.Option(
        ...,
        "--model",
        "-m",
        help="Model preset name, or a checkpoint directory.",
    ),
    dataset: Optional[Path] = Param.DatasetPath,
    threshold: float = typer.Option(
        None,
        "--threshold",
        "-t",
        show_default=False,
        help="The model's claimed RAUC. The test fails if any source scores below it.",
    ),
    mode: Mode = typer.Option(Mode.evasion, "--mode", help="Evasion or poisoning."),
    split_seed: Optional[List[int]] = typer.Option(
        None,
        "--split-seed",
        show_default=False,
        help="Split seed to score, repeatable. Defaults to the archive's seeds.",
    ),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())
    logger.debug("Executing score()")

    try:
        result = gnnworkbench.models.score.import_and_score(
            str(archive),
            model,
            str(dataset),
            threshold=threshold,
            mode=mode.value,
            split_seeds=split_seed or None,
        )
    except (gnnworkbench.utils.common.WorkbenchError, ValueError) as e:
        logger.error(e)
        sys.exit(1)

    if result["verdict"]:
        typer.echo(f"{result['verdict']}: {result['model']} min RAUC {result['min_rauc']:.4f} ({result['worst_source']})")
    if result["verdict"] == "FAIL":
        sys.exit(2)


@app.command(help="Recompute and print the summary tables of a result store.", epilog=EPILOG, no_args_is_help=True)
def report(
    out: Path = typer.Option(
        ...,
        "--out",
        "-o",
        help="Output directory of the result store.",
        exists=True,
        file_okay=False,
        dir_okay=True,
        resolve_path=True,
    ),
    mlp_name: str = typer.Option("MLP", "--mlp", help="Name of the MLP baseline model in the store."),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())
    logger.debug("Executing report()")

    try:
        gnnworkbench.models.report.summarize(str(out), mlp_name)
    except gnnworkbench.utils.common.WorkbenchError as e:
        logger.error(e)
        sys.exit(1)


@app.command(help="Convert a dataset into the JSON container.", epilog=EPILOG, no_args_is_help=True)
def convert(
    input: Optional[Path] = typer.Option(
        ...,
        "--input",
        "-i",
        help="Filepath to the .npz or .json dataset.",
        exists=True,
        file_okay=True,
        dir_okay=False,
        readable=True,
        resolve_path=True,
    ),
    output: Optional[Path] = typer.Option(
        None,
        "--output",
        "-o",
        show_default=False,
        help="Output filepath. Defaults to <input-basename>.json.",
    ),
    lcc: bool = typer.Option(
        False,
        "--lcc",
        help="Keep only the largest connected component.",
    ),
    log_level: LogLevel = Param.LogLevel,
):
    logger.setLevel(log_level.upper())

    try:
        checksum = gnnworkbench.models.util.util_convert(input, output, lcc)
    except gnnworkbench.utils.common.WorkbenchError as e:
        logger.error(e)
        sys.exit(1)
    typer.echo(checksum)


def __load(
    config: Path,
    out: Path = None,
    workers: int = None,
    prom_port: int = None,
    frequency: int = None,
) -> gnnworkbench.utils.experiment.ExperimentConfig:
    """Load the experiment document and apply the CLI overrides

    Args:
        config (Path): the experiment file

    Returns:
        ExperimentConfig: the validated experiment
    """
    try:
        experiment = gnnworkbench.utils.experiment.load_experiment(str(config))
        if out is not None:
            experiment.out = str(out)
        if workers is not None:
            experiment.workers = workers
        if prom_port is not None:
            experiment.prom_port = prom_port
        if frequency is not None:
            experiment.frequency = frequency
        experiment.validate()
    except gnnworkbench.utils.common.WorkbenchError as e:
        logger.error(e)
        sys.exit(1)
    return experiment


def _version_callback(value: bool) -> None:
    if value:
        typer.echo(f"gnnworkbench : {__version__}")
        typer.echo(f"Python       : {platform.python_version()}")
        raise typer.Exit()


@app.callback()
def version_option(
    _: bool = typer.Option(
        False,
        "--version",
        "-v",
        callback=_version_callback,
        help="Print the version and exit",
    ),
) -> None:
    pass
