import io
import json
import subprocess
import sys

import pytest

from encflow.cli import main
from fixtures import F2, F2_POLICY, F4, F4_POLICY


def _run(argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out)
    return code, json.loads(out.getvalue())


@pytest.fixture
def f4(tmp_path):
    (tmp_path / "pay.lsql").write_text(F4)
    (tmp_path / "pay.policy").write_text(F4_POLICY)
    (tmp_path / "keys.txt").write_text("k3=ah:9\n")
    (tmp_path / "work.txt").write_text("CALL pay(10)\n")
    fx = tmp_path / "fx"
    fx.mkdir()
    (fx / "T.csv").write_text("bal\n5\n")
    return tmp_path


def test_compile_and_run_f4(f4):
    code, rep = _run(["compile", f4 / "pay.lsql", f4 / "pay.policy", "-o", f4 / "out"])
    assert code == 0
    assert (rep["coercions"], rep["closures"], rep["distributed_tx"]) == ({"pay": 1}, 1, 0)
    assert json.loads((f4 / "out" / "report.json").read_text()) == rep
    code, run = _run(["run", f4 / "out", f4 / "fx", f4 / "keys.txt", f4 / "work.txt", "--seed", 1,
                      "--compare-cleartext"])
    assert code == 0
    assert run["metrics"]["round_trips"] == 1
    assert run["histories_identical"] and run["first_divergence"] is None
    assert run["violations"] == [] and run["aborted_events"] == []


def test_compile_baseline_flags(f4):
    code, rep = _run(["compile", f4 / "pay.lsql", f4 / "pay.policy", "-o", f4 / "b",
                      "--no-icm", "--no-extract", "--no-txelim"])
    assert code == 0 and rep["closures"] == 0 and rep["distributed_tx"] == 1


def test_missing_key_file_is_input_error(f4):
    _run(["compile", f4 / "pay.lsql", f4 / "pay.policy", "-o", f4 / "out"])
    code, rep = _run(["run", f4 / "out", f4 / "fx", f4 / "nokeys.txt", f4 / "work.txt"])
    assert code == 2 and "error" in rep and "kind" in rep


def test_syntax_error_is_input_error(tmp_path):
    (tmp_path / "bad.lsql").write_text("PROC f( BEGIN END")
    (tmp_path / "p.txt").write_text("")
    code, rep = _run(["check", tmp_path / "bad.lsql", tmp_path / "p.txt"])
    assert code == 2 and rep["kind"] == "LSQLSyntaxError"


def test_check_reports_suggestions(tmp_path):
    (tmp_path / "g.lsql").write_text(F2)
    (tmp_path / "g.policy").write_text(F2_POLICY)
    code, rep = _run(["check", tmp_path / "g.lsql", tmp_path / "g.policy"])
    assert code == 1 and not rep["ok"]
    assert rep["suggestions"] == ["T.d: PT -> DE:k1"]
    assert rep["errors"][0]["suggestions"]
    code, rep = _run(["check", tmp_path / "g.lsql", tmp_path / "g.policy", "--mode", "explicit-only"])
    assert code == 0 and rep["ok"]


def test_compile_refuses_flow_errors(tmp_path):
    (tmp_path / "g.lsql").write_text(F2)
    (tmp_path / "g.policy").write_text(F2_POLICY)
    code, rep = _run(["compile", tmp_path / "g.lsql", tmp_path / "g.policy", "-o", tmp_path / "o"])
    assert code == 1 and rep["compiled"] is False
    assert not (tmp_path / "o").exists()


def test_module_entry_point(f4):
    r = subprocess.run([sys.executable, "-m", "encflow", "check", str(f4 / "pay.lsql"), str(f4 / "pay.policy")],
                       capture_output=True, text=True)
    assert r.returncode == 0 and json.loads(r.stdout)["ok"]
