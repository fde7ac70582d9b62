from __future__ import annotations

import csv
import io
import json
import shutil
import subprocess
import sys

import pytest

from aidcots.cases import case_path
from aidcots.cli import EXIT_ERROR, EXIT_OK, EXIT_TIME_LIMIT, ROW_FIELDS, main


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def report(capsys, *argv):
    code, out, err = run_cli(capsys, *argv)
    assert code == EXIT_OK, err
    return json.loads(out)


# field name -> accepted JSON types; a None entry admits null
OTS_SCHEMA = {
    "case": (str,), "model": (str,), "reformulation": (str, None), "status": (str,),
    "lines_opened": (list, None), "model_cost": (float, None), "dispatch_cost": (float, None),
    "repair_cost": (float, None), "gap": (float, None), "nodes": (int,), "disconnected": (bool,),
    "gamma": (list,), "forced_closed": (list,), "ac_feasible": (bool, None),
    "approximate AC cost": (float, None), "ac_evaluation": (dict, None), "times": (dict,),
}
EVAL_SCHEMA = {
    "ac_feasible": (bool,), "approximate AC cost": (float, None), "dc_cost": (float, None), "converged": (bool,),
    "max_violation": (float, None), "violations": (list,), "islanded_buses": (list,), "losses": (float, None),
    "repair_iterations": (int,), "p_gen_mw": (list,), "q_gen_mvar": (list,), "v_mag": (list,), "times": (dict,),
}


def check_schema(d: dict, schema: dict):
    assert set(d) == set(schema)
    for key, types in schema.items():
        v = d[key]
        if v is None:
            assert None in types, key
            continue
        ok = tuple(t for t in types if t is not None)
        if float in ok and isinstance(v, int) and not isinstance(v, bool):
            continue
        assert isinstance(v, ok) and not (bool not in ok and isinstance(v, bool)), key


def test_pf(capsys):
    d = report(capsys, "pf", "case14")
    assert d["converged"] and d["iterations"] <= 6 and d["max_mismatch"] < 1e-8
    assert len(d["v_mag"]) == 14


def test_sens_with_fd_check(capsys):
    d = report(capsys, "sens", "case14", "--check-fd")
    assert len(d["lines"]) == 20 and d["lines"][0]["line"] == 1
    assert {"eps_lin", "eps_quad", "xi"} <= set(d["lines"][0])
    assert d["fd_check"]["first_g"] <= 1e-4 and d["fd_check"]["second_bb"] <= 1e-3


def test_ots_dc_schema(capsys):
    d = report(capsys, "ots", "case14", "--model", "dc")
    check_schema(d, OTS_SCHEMA)
    check_schema(d["ac_evaluation"], EVAL_SCHEMA)
    assert d["model_cost"] == pytest.approx(2051.52, rel=5e-3)
    assert d["reformulation"] is None and d["gamma"] == [0.0, 0.0]


def test_ots_aidc(capsys):
    d = report(capsys, "ots", "case14", "--model", "aidc", "--reform", "milp")
    check_schema(d, OTS_SCHEMA)
    assert d["lines_opened"] == [] and d["ac_feasible"] is True


def test_ots_deterministic_apart_from_times(capsys):
    def strip(text):
        d = json.loads(text)
        d.pop("times")
        d["ac_evaluation"].pop("times")
        return json.dumps(d, sort_keys=True)

    argv = ["ots", "case14", "--model", "aidc", "--seed", "3", "--branching", "pseudo-cost"]
    _, a, _ = run_cli(capsys, *argv)
    _, b, _ = run_cli(capsys, *argv)
    assert strip(a) == strip(b)


def test_eval(capsys):
    d = report(capsys, "eval", "case14", "--open", "3,5,9,11,14,19,20")
    assert d["ac_feasible"] is False and d["lines_opened"] == [3, 5, 9, 11, 14, 19, 20]
    assert report(capsys, "eval", "case14")["ac_feasible"] is True


def test_table_and_csv_output(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "eval", "case14", "--format", "table")
    assert code == EXIT_OK and out.splitlines()[1].startswith("-")
    target = tmp_path / "r.csv"
    code, out, _ = run_cli(capsys, "pf", "case14", "--format", "csv", "--output", str(target))
    assert code == EXIT_OK and out == ""
    rows = list(csv.DictReader(io.StringIO(target.read_text())))
    assert rows[0]["converged"] == "True"


def test_bench_rows(capsys, tmp_path):
    target = tmp_path / "bench.csv"
    code, out, err = run_cli(capsys, "bench", "case14", "case30", "--models", "dc,aidc", "--csv", str(target))
    assert code == EXIT_OK, err
    rows = json.loads(out)
    assert len(rows) == 4 and all(set(r) == set(ROW_FIELDS) for r in rows)
    by = {(r["case"], r["model"]): r for r in rows}
    assert by[("pglib_opf_case30_ieee", "dc")]["ac_feasible"] is False
    assert by[("pglib_opf_case30_ieee", "dc")]["model_cost"] == pytest.approx(5639.29, rel=5e-3)
    assert len(list(csv.DictReader(io.StringIO(target.read_text())))) == 4


def test_bench_empty_and_failing_case(capsys):
    code, out, _ = run_cli(capsys, "bench")
    assert code == EXIT_OK and json.loads(out) == []
    code, out, _ = run_cli(capsys, "bench", "no_such_case", "case14", "--models", "dc")
    rows = json.loads(out)
    assert code == EXIT_OK and [r["status"] for r in rows] == ["error", "optimal"]
    assert "not found" in rows[0]["error"]


def test_sweep(capsys):
    code, out, err = run_cli(capsys, "sweep", "case14", "--gamma", "0.01,1", "--no-eval", "--format", "json")
    assert code == EXIT_OK, err
    rows = json.loads(out)
    assert [r["gamma"] for r in rows] == [0.01, 1.0]
    assert all(r["ac_feasible"] is None for r in rows)
    code, out, _ = run_cli(capsys, "sweep", "case14", "--gamma", "0.01", "--no-eval")
    assert code == EXIT_OK and out.split()[:2] == ["gamma", "case"]


def test_time_limit_exit_code(capsys):
    code, out, _ = run_cli(capsys, "ots", "case30", "--model", "dc", "--time-limit", "0.3", "--no-eval")
    assert code == EXIT_TIME_LIMIT
    d = json.loads(out)
    assert d["status"] == "time_limit" and d["gap"] > 0


def test_errors_exit_one(capsys):
    assert run_cli(capsys, "ots", "case14", "--model", "dc", "--gamma1", "0.1")[0] == EXIT_ERROR
    assert run_cli(capsys, "ots", "missing_case")[0] == EXIT_ERROR
    assert run_cli(capsys, "ots", "case14", "--model", "nope")[0] == EXIT_ERROR
    assert run_cli(capsys, "eval", "case14", "--open", "99")[0] == EXIT_ERROR
    code, _, err = run_cli(capsys)
    assert code == EXIT_ERROR and "error" in err


def test_case_dir_env(capsys, tmp_path, monkeypatch):
    shutil.copy(case_path("case14"), tmp_path / "mygrid.m")
    monkeypatch.setenv("AIDCOTS_CASE_DIR", str(tmp_path))
    assert report(capsys, "pf", "mygrid")["converged"]


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "aidcots.cli", "pf", "case5"], capture_output=True, text=True)
    assert out.returncode == 0 and json.loads(out.stdout)["converged"]
