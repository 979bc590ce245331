#!/usr/bin/python

"""Robustness unit-test archives: perturbations stored as flip lists"""

from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Optional
import json
import logging
import os

from gnnworkbench.utils.common import ArchiveError
from gnnworkbench.utils.graph import EdgeFlipSet

logger = logging.getLogger("gnnworkbench")

SCHEMA_VERSION = "v1"


@dataclass
class ArchiveRecord:
    dataset: str
    checksum: str
    scope: str
    mode: str
    source: str
    attack: str
    budget: float
    delta: int
    split_seed: int
    flips: list
    clean_accuracy: float
    perturbed_accuracy: float
    target: Optional[int] = None
    config_hash: str = ""

    def __post_init__(self):
        if self.scope not in ("global", "local"):
            raise ArchiveError(f"scope: unknown value '{self.scope}'")
        if self.mode not in ("evasion", "poisoning"):
            raise ArchiveError(f"mode: unknown value '{self.mode}'")
        if self.scope == "local" and self.target is None:
            raise ArchiveError("target: a local record needs a target node")
        for name in ("budget", "clean_accuracy", "perturbed_accuracy"):
            if isinstance(getattr(self, name), bool) or not isinstance(getattr(self, name), (int, float)):
                raise ArchiveError(f"{name}: expected a number")
        for name in ("delta", "split_seed"):
            if isinstance(getattr(self, name), bool) or not isinstance(getattr(self, name), int):
                raise ArchiveError(f"{name}: expected an integer")
        try:
            flips = EdgeFlipSet.from_list(self.flips)
        except (TypeError, ValueError) as e:
            raise ArchiveError(f"flips: {e}")
        if len(flips) > self.delta:
            raise ArchiveError(
                f"flips: {len(flips)} pairs exceed the record's budget of {self.delta}"
            )
        self.flips = flips.to_list()

    def flip_set(self) -> EdgeFlipSet:
        return EdgeFlipSet.from_list(self.flips)

    def to_dict(self) -> dict:
        return asdict(self)


def parse_record(doc: dict, index: int = 0) -> ArchiveRecord:
    if not isinstance(doc, dict):
        raise ArchiveError(f"records[{index}]: expected an object")
    names = {f.name for f in fields(ArchiveRecord)}
    required = {f.name for f in fields(ArchiveRecord) if f.default is MISSING}
    missing = required - set(doc)
    if missing:
        raise ArchiveError(f"records[{index}]: missing fields {sorted(missing)}")
    unknown = set(doc) - names
    if unknown:
        raise ArchiveError(f"records[{index}]: unknown fields {sorted(unknown)}")
    try:
        return ArchiveRecord(**doc)
    except ArchiveError as e:
        raise ArchiveError(f"records[{index}].{e}")


@dataclass
class Archive:
    records: list = field(default_factory=list)
    schema: str = SCHEMA_VERSION

    def __len__(self):
        return len(self.records)

    def to_dict(self) -> dict:
        return {"schema": self.schema, "records": [r.to_dict() for r in self.records]}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def as_dicts(self) -> list:
        return [r.to_dict() for r in self.records]

    def checksums(self) -> set:
        return {r.checksum for r in self.records}


def loads(text: str) -> Archive:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ArchiveError(f"Malformed archive JSON: {e}")
    if not isinstance(doc, dict):
        raise ArchiveError("archive: expected a JSON object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise ArchiveError(
            f"schema: expected '{SCHEMA_VERSION}', got '{doc.get('schema')}'"
        )
    records = doc.get("records")
    if not isinstance(records, list):
        raise ArchiveError("records: expected a list")
    return Archive([parse_record(r, k) for k, r in enumerate(records)])


def write_archive(archive: Archive, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        f.write(archive.dumps())
    logger.info(f"Wrote {len(archive)} archive records to '{path}'")


def read_archive(path: str, checksum: str = None) -> Archive:
    """Load and validate an archive.

    Args:
        path (str): the archive file
        checksum (str): if given, every record must have been made on this dataset

    Returns:
        Archive: the validated archive
    """
    if not os.path.exists(path):
        raise ArchiveError(f"Archive file '{path}' does not exist")
    with open(path, "r") as f:
        archive = loads(f.read())
    if checksum is not None:
        foreign = archive.checksums() - {checksum}
        if foreign:
            raise ArchiveError(
                f"Archive records were made on other datasets ({', '.join(sorted(c[:12] for c in foreign))}); "
                f"expected {checksum[:12]}"
            )
    logger.debug(f"Read {len(archive)} archive records from '{path}'")
    return archive
