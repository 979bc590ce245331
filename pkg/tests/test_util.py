import os

import numpy as np
import pytest

from gnnworkbench.models.util import util_characteristics, util_convert, util_sbm, util_spectrum
from gnnworkbench.utils.graph import load_dataset


def test_sbm_and_convert_backups(tmp_path):
    path = str(tmp_path / "sbm.json")
    first = util_sbm(path, [4, 4], 0.6, 0.1, {"kind": "onehot"}, seed=2)
    assert load_dataset(path).checksum == first

    # an existing output is renamed, never overwritten
    util_sbm(path, [4, 4], 0.6, 0.1, {"kind": "onehot"}, seed=3)
    assert len(os.listdir(tmp_path)) == 2

    assert util_convert(path, str(tmp_path / "copy.json")) == load_dataset(path).checksum


def test_characteristics_and_spectrum(small_run, tmp_path):
    config, _ = small_run
    archive = os.path.join(config.out, "archive.json")
    dataset = os.path.join(config.out, "dataset.json")

    csv = str(tmp_path / "stats.csv")
    df = util_characteristics(archive, dataset, csv)
    assert len(df) == 2 and os.path.exists(csv)
    assert list(df["budget"]) == [0.05, 0.1]
    assert (df["flips"] <= df["flips"].iloc[-1]).all()

    out = util_spectrum(archive, dataset, record=1, top=3)
    np.testing.assert_allclose(out["difference"], out["perturbed"] - out["clean"])
    with pytest.raises(IndexError):
        util_spectrum(archive, dataset, record=5)
