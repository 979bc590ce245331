import json

import pytest

from gnnworkbench.utils.archive import (
    SCHEMA_VERSION,
    Archive,
    ArchiveRecord,
    loads,
    parse_record,
    read_archive,
    write_archive,
)
from gnnworkbench.utils.common import ArchiveError


def record_dict(**changes) -> dict:
    doc = {
        "dataset": "sbm-0",
        "checksum": "ab" * 32,
        "scope": "global",
        "mode": "evasion",
        "source": "gcn",
        "attack": "pgd",
        "budget": 0.05,
        "delta": 3,
        "split_seed": 0,
        "flips": [[4, 1], [0, 2]],
        "clean_accuracy": 0.8,
        "perturbed_accuracy": 0.7,
    }
    doc.update(changes)
    return doc


def test_record_normalizes_flips():
    r = parse_record(record_dict())
    assert r.flips == [[0, 2], [1, 4]]
    assert r.target is None and r.config_hash == ""
    assert len(r.flip_set()) == 2


@pytest.mark.parametrize(
    "changes, message",
    [
        ({"scope": "regional"}, "scope"),
        ({"mode": "training"}, "mode"),
        ({"scope": "local"}, "target"),
        ({"budget": "small"}, "budget"),
        ({"delta": 1.5}, "delta"),
        ({"split_seed": True}, "split_seed"),
        ({"flips": [[1, 1]]}, "flips"),
        ({"delta": 1}, "exceed"),
        ({"color": "red"}, "unknown fields"),
    ],
)
def test_record_validation(changes, message):
    with pytest.raises(ArchiveError, match=message):
        parse_record(record_dict(**changes), 3)


def test_missing_fields():
    doc = record_dict()
    del doc["flips"]
    with pytest.raises(ArchiveError, match=r"records\[0\]: missing fields \['flips'\]"):
        parse_record(doc)


def test_archive_round_trip(tmp_path):
    archive = Archive(
        [
            ArchiveRecord(**record_dict()),
            ArchiveRecord(**record_dict(scope="local", target=7, budget=1.0, flips=[[7, 9]])),
        ]
    )
    path = str(tmp_path / "out" / "archive.json")
    write_archive(archive, path)

    loaded = read_archive(path, checksum="ab" * 32)
    assert loaded.as_dicts() == archive.as_dicts()
    assert json.loads(open(path).read())["schema"] == SCHEMA_VERSION

    with pytest.raises(ArchiveError, match="other datasets"):
        read_archive(path, checksum="cd" * 32)


def test_archive_loading_errors(tmp_path):
    with pytest.raises(ArchiveError, match="does not exist"):
        read_archive(str(tmp_path / "missing.json"))
    with pytest.raises(ArchiveError, match="Malformed"):
        loads("{")
    with pytest.raises(ArchiveError, match="schema"):
        loads(json.dumps({"schema": "v0", "records": []}))
    with pytest.raises(ArchiveError, match="records"):
        loads(json.dumps({"schema": SCHEMA_VERSION, "records": {}}))
    with pytest.raises(ArchiveError, match=r"records\[1\]"):
        loads(json.dumps({"schema": SCHEMA_VERSION, "records": [record_dict(), record_dict(mode="x")]}))
