#!/usr/bin/python

import datetime as dt
import hashlib
import json
import logging
import numpy as np
import os
import prometheus_client
import time
import yaml

logger = logging.getLogger("gnnworkbench")


class WorkbenchError(Exception):
    """Base class of every error raised by gnnworkbench"""


class DatasetError(WorkbenchError):
    """Malformed or invalid dataset file, or checksum mismatch"""


class SplitError(WorkbenchError):
    pass


class NumericError(WorkbenchError):
    """NaN/Inf in a forward value, failed SVD or singular solve"""


class GradientError(WorkbenchError):
    pass


class TrainingError(WorkbenchError):
    pass


class MemoryBudgetError(WorkbenchError):
    pass


class ArchiveError(WorkbenchError):
    pass


class ConfigError(WorkbenchError):
    pass


class Stats:
    """Print per-cell duration stats
    and export them as Prometheus endpoints
    """

    def __init__(self, frequency: int, prom_port: int = 0):
        self.cumulative_counts: dict[str, int] = {}
        self.instantiation_time = time.time()
        self.frequency = frequency

        self.prom_latency: dict[str, prometheus_client.Summary] = {}
        self.prom_enabled = bool(prom_port)
        if self.prom_enabled:
            prometheus_client.start_http_server(prom_port)

        self.new_window()

    # reset stats while keeping cumulative counts
    def new_window(self) -> None:
        self.window_start_time: float = time.time()
        self.window_stats: dict[str, list[float]] = {}

    # add one cell duration in seconds
    def add_measurement(self, action: str, measurement: float) -> None:
        self.window_stats.setdefault(action, []).append(measurement)
        self.cumulative_counts.setdefault(action, 0)
        self.cumulative_counts[action] += 1

        if not self.prom_enabled:
            return

        if action not in self.prom_latency:
            metric = "".join(c if c.isalnum() else "_" for c in action)
            self.prom_latency[action] = prometheus_client.Summary(
                f"cell_duration_{metric}",
                f"Duration of experiment cells for attack {action}",
            )
        self.prom_latency[action].observe(measurement)

    # calculate the current stats this instance has collected.
    def calculate_stats(self) -> list:
        def get_stats_row(action: str):
            elapsed: float = time.time() - self.instantiation_time

            arr = np.array(self.window_stats[action])

            return [
                action,
                round(elapsed, 0),
                self.cumulative_counts[action],
                len(arr),
                round(np.mean(arr), 2),
                round(np.percentile(arr, 50), 2),
                round(np.percentile(arr, 90), 2),
                round(np.max(arr), 2),
            ]

        return [
            get_stats_row(action) for action in sorted(list(self.window_stats.keys()))
        ]


def derive_seed(*parts) -> int:
    """Derive a 63-bit seed by hashing the given parts.

    Every random stream in the workbench is keyed by (run id, purpose) so that
    independent cells never share or race on a generator.

    Args:
        parts: any json-serializable values, e.g. ("pgd", "gcn", 0, "sample")

    Returns:
        int: the seed
    """
    digest = hashlib.sha256(json.dumps(parts, default=str).encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def make_rng(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def content_hash(obj) -> str:
    """SHA-256 of the canonical JSON serialization of obj"""
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    ).hexdigest()


def load_document(source: str) -> dict:
    """Load a JSON/YAML document from a filepath or from an inline string

    Args:
        source (str): filepath, or a JSON/YAML string

    Returns:
        dict: the parsed document
    """
    if os.path.exists(source):
        with open(source, "r") as f:
            doc = yaml.safe_load(f.read())
    else:
        doc = yaml.safe_load(source)

    if not isinstance(doc, dict):
        raise ConfigError(
            f"The value passed is not a valid path to a JSON/YAML file, nor has key:value pairs: '{source}'"
        )
    return doc


def get_based_name_dir(filepath: str):
    """Return the directory name based on the filename

    Args:
        filepath (str): the filepath, eg: /path/to/myfile.json

    Returns:
        str: the name of the directory, eg: /path/to/myfile
    """
    return os.path.join(
        os.path.dirname(filepath),
        os.path.splitext(os.path.basename(filepath))[0].lower(),
    )


def backup_path(path: str):
    """Rename an existing file or directory so it is not overwritten"""
    if os.path.exists(path):
        os.rename(path, path + "." + dt.datetime.utcnow().strftime("%Y%m%d-%H%M%S"))
