import csv
import json

import numpy as np
import pytest

from drstrat.cli import main, read_allocation
from drstrat.config import load_config, loads_config, preset_config
from drstrat.errors import ConfigError
from drstrat.problem import toy_problem

SMALL_BO = {"n_iterations": 3, "inner_starts": 2, "inner_max_iter": 300}


@pytest.fixture
def toy_cfg(tmp_path):
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(preset_config("toy", "l2", **SMALL_BO), indent=2))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_shipped_configs_load():
    from pathlib import Path

    configs = sorted(Path(__file__).resolve().parents[1].joinpath("configs").glob("*.json"))
    assert len(configs) == 8
    for p in configs:
        cfg = load_config(p)
        assert cfg.problem.total in (100, 1000)


def test_toy_config_reproduces_preset():
    cfg = loads_config(json.dumps(preset_config("toy", "parametric")))
    ref = toy_problem()
    np.testing.assert_allclose(cfg.problem.means, ref.means, rtol=1e-14)
    np.testing.assert_allclose(cfg.problem.reference.mass, ref.reference.mass, rtol=1e-14)
    assert len(cfg.sets[0].members()) == 15


def test_malformed_json_reports_position(tmp_path):
    with pytest.raises(ConfigError, match="line 3"):
        loads_config('{\n "grid": 1,\n oops\n}')


def test_schema_error_mentions_line():
    bad = preset_config("toy", "l2")
    bad["strata"] = {"equal_contiguous": "seven"}
    with pytest.raises(ConfigError, match="line"):
        loads_config(json.dumps(bad, indent=2))


def test_semantic_error_names_section():
    bad = preset_config("toy", "l2")
    bad["total_budget"] = 5
    with pytest.raises(ConfigError, match="total_budget"):
        loads_config(json.dumps(bad, indent=2))


def test_solve_then_evaluate_and_replicate(toy_cfg, tmp_path):
    out = tmp_path / "run"
    assert main(["solve", "--config", str(toy_cfg), "--out", str(out), "--threads", "1"]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert sum(rep["best_allocation"]) == 100
    assert (out / "trace.csv").exists() and (out / "manifest.json").exists()
    alloc = _rows(out / "allocation.csv")
    assert [int(r["n_k"]) for r in alloc] == rep["best_allocation"]
    np.testing.assert_array_equal(read_allocation(out / "report.json", 100, 7), rep["best_allocation"])

    ev = tmp_path / "ev"
    assert main(["evaluate", "--config", str(toy_cfg), "--allocation", str(out / "allocation.csv"),
                 "--out", str(ev), "--threads", "1"]) == 0
    rows = _rows(ev / "evaluate.csv")
    assert [r["model"] for r in rows] == ["0", "1", "max"]
    for r in rows:
        assert float(r["worst_case_variance"]) >= float(r["nominal_variance"])
        assert (ev / r["worst_case_pmf_file"]).exists()
    assert np.isclose(float(rows[-1]["worst_case_variance"]), rep["best_value"], rtol=1e-12)

    rp = tmp_path / "rp"
    assert main(["replicate", "--config", str(toy_cfg), "--allocation", str(out / "allocation.csv"),
                 "--replications", "500", "--out", str(rp), "--threads", "1"]) == 0
    data = json.loads((rp / "replication.json").read_text())
    assert data["replications"] == 500 and data["simulator_calls"] == 100 * 500


def test_compare_writes_ratio(toy_cfg, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(toy_cfg), "--out", str(out), "--threads", "1"]) == 0
    data = json.loads((out / "compare.json").read_text())
    assert data["ratio"] >= 1 - 1e-9
    for name in ("allocation_bars.csv", "worst_case_curves.csv", "str_m_report.json", "dr_str_report.json"):
        assert (out / name).exists()


def test_config_errors_leave_no_files(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    out = tmp_path / "never"
    assert main(["solve", "--config", str(bad), "--out", str(out)]) == 2
    assert not out.exists()


def test_single_replication_rejected(toy_cfg, tmp_path):
    alloc = tmp_path / "a.csv"
    alloc.write_text("stratum,n_k\n" + "".join(f"{k},{n}\n" for k, n in enumerate([15, 14, 14, 14, 15, 14, 14])))
    out = tmp_path / "r1"
    assert main(["replicate", "--config", str(toy_cfg), "--allocation", str(alloc),
                 "--replications", "1", "--out", str(out)]) == 2
    assert not out.exists()


def test_allocation_must_match_budget(toy_cfg, tmp_path):
    alloc = tmp_path / "a.csv"
    alloc.write_text("stratum,n_k\n" + "".join(f"{k},10\n" for k in range(7)))
    assert main(["evaluate", "--config", str(toy_cfg), "--allocation", str(alloc),
                 "--out", str(tmp_path / "x")]) == 2


def test_outputs_are_byte_identical(toy_cfg, tmp_path):
    before = toy_cfg.read_bytes()
    for run in ("a", "b"):
        assert main(["solve", "--config", str(toy_cfg), "--out", str(tmp_path / run), "--threads", "1"]) == 0
    for name in ("report.json", "allocation.csv", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert toy_cfg.read_bytes() == before


def test_replicate_identical_across_threads(toy_cfg, tmp_path, monkeypatch):
    alloc = tmp_path / "a.csv"
    alloc.write_text("stratum,n_k\n" + "".join(f"{k},{n}\n" for k, n in enumerate([15, 14, 14, 14, 15, 14, 14])))
    monkeypatch.setenv("DRSTRAT_THREADS", "2")
    args = ["replicate", "--config", str(toy_cfg), "--allocation", str(alloc), "--replications", "2500"]
    assert main(args + ["--out", str(tmp_path / "t2")]) == 0
    assert json.loads((tmp_path / "t2" / "manifest.json").read_text())["threads"] == 2
    assert main(args + ["--out", str(tmp_path / "t1"), "--threads", "1"]) == 0
    assert (tmp_path / "t1" / "replication.csv").read_bytes() == (tmp_path / "t2" / "replication.csv").read_bytes()
