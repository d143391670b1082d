import json
import math

import pytest

from capkm.cli import bench_summary, main, run_bench


@pytest.fixture
def gap3(tmp_path):
    p = tmp_path / "gap3.ckm"
    assert main(["generate", "--gap", "3", "--dist", "1", "--out", str(p)]) == 0
    return p


def test_generate_then_exact(gap3, capsys):
    assert main(["exact", "--input", str(gap3)]) == 0
    assert capsys.readouterr().out.strip() == "2"


def test_generate_to_stdout(capsys):
    assert main(["generate", "--euclid", "3", "5", "2", "1", "3", "--seed", "4"]) == 0
    assert capsys.readouterr().out.startswith("CKM 3 5 2")


def test_solve_is_deterministic(gap3, tmp_path, capsys):
    outs = []
    for t in range(2):
        a = tmp_path / f"a{t}.txt"
        assert main(["solve", "--input", str(gap3), "--eps", "1", "--seed", "7",
                     "--assignment", str(a)]) == 0
        outs.append((capsys.readouterr().out, a.read_text()))
    assert outs[0] == outs[1]
    assert "cost: " in outs[0][0]


def test_solve_json(gap3, capsys):
    assert main(["solve", "--input", str(gap3), "--json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["k"] == 5 and rep["eps"] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_eval_accepts_solver_output(tmp_path, capsys, seed):
    inst = tmp_path / "i.ckm"
    main(["generate", "--euclid", "6", "10", "3", "2", "5", "--seed", str(seed),
          "--out", str(inst)])
    a = tmp_path / "a.txt"
    assert main(["solve", "--input", str(inst), "--eps", "0.5", "--assignment", str(a),
                 "--out", str(tmp_path / "r.txt")]) == 0
    capsys.readouterr()
    assert main(["eval", "--input", str(inst), "--assignment", str(a), "--eps", "0.5"]) == 0
    cost = float(capsys.readouterr().out.split(":")[1])
    report = (tmp_path / "r.txt").read_text()
    assert f"cost: {cost!r}" in report


def test_eval_tampered_names_facility(gap3, tmp_path, capsys):
    a = tmp_path / "a.txt"
    main(["solve", "--input", str(gap3), "--assignment", str(a), "--out", str(tmp_path / "r")])
    lines = a.read_text().splitlines()
    victim = lines[0].split()[1]
    a.write_text("".join(f"{ln.split()[0]} {victim}\n" for ln in lines))
    capsys.readouterr()
    assert main(["eval", "--input", str(gap3), "--assignment", str(a), "--eps", "1"]) == 1
    assert f"facility {victim}" in capsys.readouterr().err


def test_eval_bad_assignment_file(gap3, tmp_path):
    a = tmp_path / "a.txt"
    a.write_text("c0_0 nowhere\n")
    assert main(["eval", "--input", str(gap3), "--assignment", str(a)]) == 2
    a.write_text("c0_0\n")
    assert main(["eval", "--input", str(gap3), "--assignment", str(a)]) == 2


def test_eval_missing_clients(gap3, tmp_path, capsys):
    a = tmp_path / "a.txt"
    a.write_text("c0_0 f0_0\n")
    assert main(["eval", "--input", str(gap3), "--assignment", str(a)]) == 1
    assert "unassigned" in capsys.readouterr().err


def test_exit_codes(tmp_path, capsys):
    assert main(["solve", "--input", str(tmp_path / "missing.ckm")]) == 2
    bad = tmp_path / "bad.ckm"
    bad.write_text("CKM 1 1 0\n")
    assert main(["solve", "--input", str(bad)]) == 2
    assert main(["solve", "--gap", "2", "--euclid", "1", "1", "1", "1", "1"]) == 2
    assert main(["nonsense"]) == 2
    tight = tmp_path / "tight.ckm"
    tight.write_text("CKM 1 3 1\nF a 1 0 0\nC x 0 0\nC y 0 0\nC z 0 0\n")
    assert main(["solve", "--input", str(tight), "--eps", "1"]) == 1
    assert main(["exact", "--input", str(tight)]) == 1
    assert main(["solve", "--gap", "2", "--eps", "3"]) == 2
    capsys.readouterr()


def test_internal_error_exit(monkeypatch, gap3, capsys):
    import capkm.cli as cli

    def boom(*a, **k):
        raise AssertionError("stage broke")

    monkeypatch.setattr(cli, "solve", boom)
    assert main(["solve", "--input", str(gap3)]) == 3
    assert "stage broke" in capsys.readouterr().err


def test_bench_outputs(tmp_path, capsys):
    out, summ = tmp_path / "b.tsv", tmp_path / "s.json"
    assert main(["bench", "--count", "2", "--eps-list", "1,0.5", "--out", str(out),
                 "--summary", str(summ)]) == 0
    table = capsys.readouterr().out
    assert "cost/OPT" in table
    rows = out.read_text().splitlines()
    assert rows[0].split("\t")[0] == "instance" and len(rows) == 5
    for r in rows[1:]:
        fields = r.split("\t")
        assert len(fields) == 11 and "nan" not in fields
    s = json.loads(summ.read_text())
    assert set(s) == {"0.5", "1.0"} and s["1.0"]["n"] == 2


def test_run_bench_rows_complete():
    rows = run_bench(3, 10, [1.0])
    assert len(rows) == 3
    for r in rows:
        assert all(not (isinstance(v, float) and math.isnan(v)) for v in r.values())
        assert r["cost"] >= r["opt"] - 1e-9 or r["violation"] > 1.0
    assert bench_summary(rows)["1.0"]["n"] == 3
