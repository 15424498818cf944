from __future__ import annotations

import json
import pathlib

import pytest

from budgetmech.cli import main
from budgetmech.core import load_instance
from budgetmech.numbers import mpq

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_five_agents(capsys):
    code, out, _ = run(["run", "--mech", "da", FIXTURES / "five-agents.json"], capsys)
    assert code == 0
    rows = [l.split(",") for l in out.splitlines()[2:]]
    assert rows[0][1] == "1"
    assert rows[1][1] == "13/2-5/2*sqrt(5)"  # 0.9098...
    assert [r[1] for r in rows[2:]] == ["0", "0", "0"]


def test_run_summary(capsys):
    code, out, _ = run(["run", FIXTURES / "lb-3-i1.json", "--format", "summary"], capsys)
    obj = json.loads(out)
    assert code == 0 and obj["value"] == "1" and obj["branch"] == "star:0"
    assert [a["x"] for a in obj["agents"]] == ["1", "0"]


def test_run_infeasible_theta_alpha(capsys):
    code, _, err = run(["run", "--mech", "da-theta", "--theta", "3/2", "--alpha", "0.6",
                        FIXTURES / "five-agents-theta1.json"], capsys)
    assert code == 3 and "infeasible" in err


def test_run_missing_and_bad_files(tmp_path, capsys):
    assert run(["run", tmp_path / "nope.json"], capsys)[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text('{"budget":"10","theta":"2","agents":[{"v":"1","c":"1"},{"v":"1","c":"8"}]}')
    assert run(["run", bad], capsys)[0] == 2
    assert run(["run", "--mech", "da-cap", FIXTURES / "five-agents.json"], capsys)[0] == 2
    assert run(["nosuchcommand"], capsys)[0] == 2


def test_curve_csv(capsys):
    code, out, _ = run(["curve", FIXTURES / "single-agent.json", "--agent", "0"], capsys)
    assert code == 0
    assert out.splitlines() == ["u_lo,u_hi,form,a,b,d", "0,10,const,1,0,0"]
    code, out, _ = run(["curve", FIXTURES / "five-agents.json", "--agent", "0"], capsys)
    assert out.splitlines()[1:] == ["0,2,const,1,0,0"]


def test_curve_losing_agent_empty(tmp_path, capsys):
    path = tmp_path / "z.json"
    path.write_text('{"budget":"10","agents":[{"v":"0","c":"1"},{"v":"3","c":"2"},{"v":"3","c":"2"}]}')
    code, out, _ = run(["curve", path, "--agent", "0"], capsys)
    assert code == 0 and out.splitlines() == ["u_lo,u_hi,form,a,b,d"]


def test_audit_exit_codes(tmp_path, capsys):
    assert run(["audit", tmp_path / "missing.json"], capsys)[0] == 2
    code, out, _ = run(["audit", "--seed", "11", "--count", "2", "--n", "5"], capsys)
    assert code == 0 and out.count("# instance") == 2
    dest = tmp_path / "report.json"
    code, _, _ = run(["audit", FIXTURES / "capped-two-types.json", "--mech", "da-cap",
                      "--format", "summary", "--out", dest], capsys)
    assert code == 0 and json.loads(dest.read_text())["passed"]


def test_bounds(capsys):
    code, out, _ = run(["bounds", "--theta", "2,1000"], capsys)
    rows = out.splitlines()
    assert code == 0 and rows[1] == "2,19/16,5/2"
    div = mpq(rows[2].split(",")[1])
    assert abs(div - mpq(5, 4)) < mpq(1, 10**4)
    code, out, _ = run(["bounds", "--lo", "1", "--hi", "2", "--step", "1/2"], capsys)
    assert [r.split(",")[0] for r in out.splitlines()[1:]] == ["1", "3/2", "2"]
    assert run(["bounds", "--theta", "1/2"], capsys)[0] == 2


def test_gen_roundtrip(tmp_path, capsys):
    dest = tmp_path / "g.json"
    assert run(["gen", "--seed", "7", "--n", "4", "--profile", "concave", "--types", "2", "--out", dest], capsys)[0] == 0
    inst = load_instance(dest)
    assert inst.n == 4 and len(inst.type_ids) <= 2
    run(["gen", "--seed", "7", "--n", "4", "--profile", "concave", "--types", "2"], capsys)
    code, again, _ = run(["gen", "--seed", "7", "--n", "4", "--profile", "concave", "--types", "2"], capsys)
    assert again == dest.read_text()
