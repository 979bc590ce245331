#!/usr/bin/python

from enum import Enum
import typer

EPILOG = "Robustness evaluation of graph neural network defenses under adaptive structure attacks."


class LogLevel(str, Enum):
    debug = "debug"
    info = "info"
    warning = "warning"
    error = "error"


class Mode(str, Enum):
    evasion = "evasion"
    poisoning = "poisoning"


class Param:
    LogLevel = typer.Option(
        "info", "--log-level", "-l", show_choices=True, help="Set the logging level."
    )

    ConfigPath = typer.Option(
        ...,
        "--config",
        "-c",
        help="Filepath to the JSON/YAML experiment document.",
        exists=True,
        file_okay=True,
        dir_okay=False,
        writable=False,
        readable=True,
        resolve_path=True,
    )

    Out = typer.Option(
        None,
        "--out",
        "-o",
        show_default=False,
        help="Output directory of the result store. Overrides the experiment's 'out'.",
    )

    Workers = typer.Option(
        None,
        "--workers",
        "-x",
        show_default=False,
        help="Number of worker processes, 0 to run inline. Overrides the experiment's 'workers'.",
    )

    ArchivePath = typer.Option(
        ...,
        "--archive",
        "-a",
        help="Filepath to the robustness unit-test archive.",
        exists=True,
        file_okay=True,
        dir_okay=False,
        readable=True,
        resolve_path=True,
    )

    DatasetPath = typer.Option(
        ...,
        "--dataset",
        "-d",
        help="Filepath to the dataset (JSON container or .npz).",
        exists=True,
        file_okay=True,
        dir_okay=False,
        readable=True,
        resolve_path=True,
    )

    Port = typer.Option(
        None,
        "-p",
        "--port",
        show_default=False,
        help="The port of the Prometheus server. Overrides the experiment's 'prom_port'.",
    )
