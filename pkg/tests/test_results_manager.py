import json
from enum import Enum

import numpy as np
import pytest

from config import RunConfig
from errors import ConfigError
from results_manager import ResultsManager, read_results, read_table, plain, SCHEMA_VERSION


class Color(Enum):
    RED = "red"


def test_plain_converts_numeric_types():
    data = plain({"a": np.float64(1.5), "b": np.arange(2), "z": 1 + 2j, "flag": np.bool_(True),
                  "c": Color.RED, 3: (np.int64(4),)})
    assert data == {"a": 1.5, "b": [0, 1], "z": {"re": 1.0, "im": 2.0}, "flag": True, "c": "red", "3": [4]}
    json.dumps(data)


def test_json_round_trip_with_metadata(output_dir):
    rc = RunConfig("sweep", output_dir=output_dir, seed=5, body={"preset": "catenoid_full"})
    results = ResultsManager(run_config=rc, claim="log loss")
    path = results.write_json("sweep", {"norm": np.float64(2.0)}, preset="catenoid_full")
    metadata, data = read_results(path)
    assert data == {"norm": 2.0}
    assert metadata["schema_version"] == SCHEMA_VERSION
    assert metadata["config_hash"] == rc.config_hash()
    assert metadata["seed"] == 5
    assert metadata["claim"] == "log loss"
    assert metadata["preset"] == "catenoid_full"
    assert results.written == [path]


def test_csv_header_and_rows(output_dir):
    results = ResultsManager(output_dir)
    rows = [{"h": 0.04, "norm": 1.0 / 3.0, "converged": True, "error": None}]
    path = results.write_csv("rows", rows, preset="x")
    header, body = read_table(path)
    assert "generated_at" in header
    assert header["preset"] == "x"
    assert body == [{"h": "0.04", "norm": repr(1.0 / 3.0), "converged": "true", "error": ""}]
    with open(path, encoding="utf-8") as f:
        assert f.readline().startswith("# generated_at: ")


def test_curve_skips_non_finite(output_dir):
    results = ResultsManager(output_dir)
    path = results.write_curve("curve", [(1.0, 2.0), (2.0, float("nan")), (3.0, 4.0)])
    with open(path, encoding="utf-8") as f:
        data = [line for line in f if not line.startswith("#")]
    assert data == ["1.0 2.0\n", "3.0 4.0\n"]


def test_unusable_output_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        ResultsManager(str(blocker / "results"))


def test_read_results_without_metadata(tmp_path):
    path = tmp_path / "raw.json"
    path.write_text(json.dumps({"a": 1}))
    assert read_results(str(path)) == ({}, {"a": 1})


def test_anchor_in_metadata_and_header(output_dir):
    results = ResultsManager(output_dir, claim="1/h bound", anchor="nontrapping reference bound")
    metadata, _ = read_results(results.write_json("resolve", {}))
    assert metadata["anchor"] == "nontrapping reference bound"
    header, _ = read_table(results.write_csv("resolve", [{"h": 0.1}]))
    assert header["anchor"] == "nontrapping reference bound"


def test_save_config_round_trip(output_dir):
    rc = RunConfig("glue", output_dir=output_dir, seed=3, body={"mu_star": 0.8})
    results = ResultsManager(run_config=rc)
    path = results.save_config()
    with open(path, encoding="utf-8") as f:
        again = RunConfig.from_dict(json.load(f))
    assert again.config_hash() == rc.config_hash()
    assert results.written == [path]
    assert ResultsManager(output_dir).save_config() is None


def test_write_triplets(output_dir):
    import scipy.sparse as sp
    results = ResultsManager(output_dir)
    path = results.write_triplets("operator", sp.diags([1.0, 2.0 + 1.0j]))
    with open(path, encoding="utf-8") as f:
        assert f.readline().strip() == "# 2 2 2"
    data = np.loadtxt(path)
    assert data.shape == (2, 4)
    assert data[1, 3] == 1.0
