import json

import pytest

from cyclelab import report as rpt
from cyclelab.cli import main


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    out = d / "tower.json"
    assert main(["build-tower", "--no-timing", "--out", str(out)]) == 0
    return out


def write(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_build_report(built):
    doc = rpt.loads(built.read_text())
    assert doc["status"] == "ok"
    assert [lv["period"] for lv in doc["levels"]] == [26, 84, 1519, 168764]
    assert "timing" not in doc


def test_build_is_byte_identical(built, tmp_path):
    again = tmp_path / "again.json"
    assert main(["build-tower", "--no-timing", "--out", str(again)]) == 0
    assert again.read_bytes() == built.read_bytes()


def test_verify_saved_tower(built, tmp_path):
    out = tmp_path / "v.json"
    assert main(["verify", str(built), "--no-timing", "--out", str(out)]) == 0
    doc = rpt.loads(out.read_text())
    assert doc["status"] == "ok" and all(a["passed"] for a in doc["assertions"])
    names = {a["name"] for a in doc["assertions"]}
    assert {"condition_1_chart_boxes", "condition_4_gamma_bound", "condition_5_exponent_halving"} <= names


def test_verify_flags_injected_gamma(built, tmp_path, capsys):
    doc = rpt.loads(built.read_text())
    doc["levels"][1]["gamma"] = 1.0
    bad = tmp_path / "bad.json"
    bad.write_text(rpt.dumps(doc))
    assert main(["verify", str(bad), "--no-timing", "--out", str(tmp_path / "o.json")]) == 3
    assert "condition_4" in capsys.readouterr().err


@pytest.mark.parametrize("text,code", [
    ("[tower]\nC = 100.0\n", 65),
    ("[tower\nC = 1\n", 64),
    ("[tower]\nhalving_ratio = 1.0\n", 65),
    ("[model]\nbogus = 1\n", 65),
    ("[model]\nlam = 1.5\n", 65),
])
def test_config_errors(tmp_path, capsys, text, code):
    assert main(["build-tower", "--config", write(tmp_path, text)]) == code
    err = capsys.readouterr().err
    if code == 65 and "C = 100" in text:
        assert "311.932" in err


def test_usage_errors(capsys, tmp_path):
    assert main(["build-tower", "--emit-plot-data"]) == 64
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 64
    assert main(["verify", str(tmp_path / "missing.json")]) == 64


def test_zero_levels(capsys):
    assert main(["build-tower", "--levels", "0", "--no-timing"]) == 0
    doc = rpt.loads(capsys.readouterr().out)
    assert doc["levels"] == []


def test_infeasible_exit(tmp_path, capsys):
    out = tmp_path / "inf.json"
    assert main(["build-tower", "--config", write(tmp_path, "[tower]\nm_max = 1\n"), "--out", str(out)]) == 2
    doc = rpt.loads(out.read_text())
    assert doc["status"] == "infeasible"
    assert doc["failure"]["ledger"]["fraction_margin"] < 0
    assert len(doc["levels"]) == 1


def test_solve_csv(tmp_path):
    cfg = write(tmp_path, "[solve]\nl = [1, 10]\nm = [1, 10]\n[[solve.corbd]]\nk = 4\np = 2\nq = 6\n")
    out = tmp_path / "solve.csv"
    assert main(["solve", "--config", cfg, "--format", "csv", "--no-timing", "--out", str(out)]) == 0
    raw = out.read_bytes()
    lines = raw.split(b"\r\n")
    assert lines[-1] == b""
    assert len(lines) - 2 == 101
    assert b"\n" not in raw.replace(b"\r\n", b"")


def test_report_reemits_csv(built, capsys):
    assert main(["report", str(built), "--format", "csv"]) == 0
    out = capsys.readouterr().out
    rows = out.strip().split("\r\n")
    assert rows[0].startswith("n,l,m,period") and len(rows) == 5


def test_plot_data(tmp_path):
    out = tmp_path / "t.json"
    assert main(["build-tower", "--levels", "2", "--no-timing", "--emit-plot-data", "--out", str(out)]) == 0
    plot = (tmp_path / "t.json.plot.csv").read_text()
    assert len(plot.strip().splitlines()) == 3


def test_sweep(tmp_path, capsys):
    cfg = write(tmp_path, "[tower]\nlevels = 2\n[sweep]\ngrid = { \"tower.halving_ratio\" = [0.5, 0.6] }\n")
    assert main(["sweep", "--config", cfg, "--no-timing"]) == 0
    doc = rpt.loads(capsys.readouterr().out)
    assert [r["status"] for r in doc["rows"]] == ["ok", "ok"]


def test_nonfinite_floats_round_trip():
    text = rpt.dumps({"a": float("inf"), "b": [float("nan"), 1.0, 0.1]})
    json.loads(text)
    back = rpt.loads(text)
    assert back["a"] == float("inf") and back["b"][2] == 0.1
    assert rpt.format_float(0.1 + 0.2) == "0.30000000000000004"


def test_verify_csv_lists_assertions(built, capsys):
    assert main(["verify", str(built), "--format", "csv", "--no-timing"]) == 0
    rows = capsys.readouterr().out.strip().split("\r\n")
    assert rows[0] == "name,passed,detail"
    assert all(r.split(",")[1] == "true" for r in rows[1:])
