import json
import os

import pytest

from main import main, build_parser
from results_manager import read_results, read_table


def _run(tmp_path, *args):
    return main([*args, "--output", str(tmp_path), "--verbosity", "0"])


def test_preset_list(tmp_path):
    assert _run(tmp_path, "preset-list") == 0
    _, data = read_results(str(tmp_path / "presets.json"))
    assert "catenoid_full" in [item["name"] for item in data]


def test_flow_without_profile_is_config_error(tmp_path):
    assert _run(tmp_path, "flow") == 2


def test_unknown_preset_is_config_error(tmp_path):
    assert _run(tmp_path, "resolve", "--preset", "torus_full", "--h", "0.1") == 2


def test_resolve_without_h_is_config_error(tmp_path):
    assert _run(tmp_path, "resolve", "--preset", "nontrapping_baseline") == 2


def test_unknown_command_rejected_by_parser():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["torus"])


def test_classify_writes_orbit_table(tmp_path):
    assert _run(tmp_path, "classify", "--profile", "catenoid") == 0
    header, rows = read_table(str(tmp_path / "orbits.csv"))
    assert header["command"] == "classify"
    assert sorted(float(r["mu"]) for r in rows) == pytest.approx([-1.0, 1.0])
    assert {r["stability"] for r in rows} == {"hyperbolic"}


def test_classify_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert _run(first, "classify", "--profile", "double_well") == 0
    assert _run(second, "classify", "--profile", "double_well") == 0
    meta_a, data_a = read_results(str(first / "classify.json"))
    meta_b, data_b = read_results(str(second / "classify.json"))
    assert data_a == data_b
    meta_a.pop("generated_at")
    meta_b.pop("generated_at")
    assert meta_a == meta_b


def test_config_file_with_points(tmp_path):
    path = tmp_path / "classify.json"
    path.write_text(json.dumps({
        "command": "classify",
        "body": {
            "profile": {"kind": "catenoid"},
            "points": [[0.0, 0.0, 1.0], {"on_shell": True, "s": 1.0, "mu": 0.5, "sign": 1.0}],
        },
    }), encoding="utf-8")
    out = tmp_path / "out"
    assert _run(out, "classify", "--config", str(path)) == 0
    _, rows = read_table(str(out / "points.csv"))
    assert len(rows) == 2
    assert rows[0]["label"] == "trapped"
    assert os.path.exists(out / "classify.json")


def test_missing_config_file(tmp_path):
    assert _run(tmp_path, "classify", "--config", str(tmp_path / "missing.json")) == 2


def test_alias_preset_runs(tmp_path):
    assert _run(tmp_path, "resolve", "--preset", "catenoid_thm1", "--h", "0.1") == 0
    header, rows = read_table(str(tmp_path / "resolve.csv"))
    assert header["anchor"] == "main microlocal estimate near a hyperbolic orbit"
    assert len(rows) == 1


def test_run_config_saved_next_to_results(tmp_path):
    assert _run(tmp_path, "resolve", "--preset", "nontrapping_baseline", "--h", "0.2") == 0
    with open(tmp_path / "run_config.json", encoding="utf-8") as f:
        saved = json.load(f)
    assert saved["command"] == "resolve"
    assert saved["body"]["h"] == 0.2
    again = tmp_path / "again"
    assert _run(again, "resolve", "--config", str(tmp_path / "run_config.json")) == 0
    _, first = read_table(str(tmp_path / "resolve.csv"))
    _, second = read_table(str(again / "resolve.csv"))
    assert first[0]["norm"] == second[0]["norm"]


def test_resolve_dumps_operator(tmp_path):
    path = tmp_path / "resolve.json"
    path.write_text(json.dumps({
        "command": "resolve",
        "body": {"preset": "nontrapping_baseline", "h": 0.2, "dump_operator": True},
    }), encoding="utf-8")
    out = tmp_path / "out"
    assert _run(out, "resolve", "--config", str(path)) == 0
    _, data = read_results(str(out / "resolve.json"))
    dumped = out / f"operator_m{data['row']['m_star']}.txt"
    with open(dumped, encoding="utf-8") as f:
        n_rows, n_cols, nnz = (int(v) for v in f.readline()[2:].split())
    assert n_rows == n_cols and nnz >= n_rows
