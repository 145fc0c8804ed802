import csv
import json
import subprocess
import sys

import pytest

from baqudit import cli
from baqudit.errors import NumericalError


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_levels_and_transitions(tmp_path):
    assert cli.main(["levels", "--out", str(tmp_path / "lv")]) == 0
    rows = _rows(tmp_path / "lv" / "levels.csv")
    assert len(rows) == 32
    assert {r["manifold"] for r in rows} == {"S12", "D52"}
    assert cli.main(["transitions", "--sidebands", "--out", str(tmp_path / "tr")]) == 0
    assert len(_rows(tmp_path / "tr" / "transitions.csv")) == 80
    assert len(_rows(tmp_path / "tr" / "sidebands.csv")) == 560


def test_compile_and_simulate(tmp_path):
    out = tmp_path / "c"
    assert cli.main(["compile", "--target", "hadamard2", "--epsilon", "1e-3", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["initial_count"] == 12 and rep["final_count"] <= 7
    seq = json.loads((out / "pulses.json").read_text())
    assert sum("theta" in p for p in seq["pulses"]) == rep["final_count"]
    sim = tmp_path / "s"
    assert cli.main(["simulate", "--sequence", str(out / "pulses.json"), "--noise-preset", "none",
                     "--shots", "4", "--out", str(sim)]) == 0
    pops = [float(r["population"]) for r in _rows(sim / "populations.csv")]
    assert pops == pytest.approx([0.25] * 4, abs=1e-3)


def test_rerun_is_bit_identical(tmp_path):
    a = tmp_path / "a"
    assert cli.main(["ramsey", "--dims", "2-4", "--shots", "16", "--seed", "7", "--out", str(a)]) == 0
    b = tmp_path / "b"
    assert cli.main(["rerun", str(a / "manifest.json"), "--out", str(b)]) == 0
    for name in ("contrast.csv", "scan.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert ma["outputs_sha256"] == mb["outputs_sha256"]


def test_config_file_sets_defaults(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('dims = "2-3"\nshots = 8\n')
    out = tmp_path / "r"
    assert cli.main(["ramsey", "--config", str(cfg), "--out", str(out)]) == 0
    assert [r["d"] for r in _rows(out / "contrast.csv")] == ["2", "3"]


def test_exit_code_config_error(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text("no_such_option = 1\n")
    assert cli.main(["levels", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["compile", "--target", "QFT", "--out", str(tmp_path / "y")]) == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["levels", "--bogus"])
    assert exc.value.code == 2


def test_exit_code_infeasible(tmp_path):
    assert cli.main(["select-states", "--dims", "33", "--out", str(tmp_path / "s")]) == 4


def test_exit_code_numerical(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NumericalError("no convergence")
    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["levels"]) == 3


def test_spam_and_select_states(tmp_path):
    out = tmp_path / "sp"
    assert cli.main(["spam", "budget", "--dims", "2", "--out", str(out)]) == 0
    assert json.loads((out / "budget.json").read_text())["budgets"][0]["total"] < 5e-4
    sel = tmp_path / "sel"
    assert cli.main(["select-states", "--dims", "2-3", "--out", str(sel)]) == 0
    assert (sel / "encodings" / "encoding_d3.json").exists()
    assert len(_rows(sel / "summary.csv")) == 2


def test_calibrate(tmp_path):
    out = tmp_path / "cal"
    assert cli.main(["calibrate-sim", "--out", str(out)]) == 0
    data = json.loads((out / "calibration.json").read_text())
    assert abs(data["sigma_f_Hz"] - 78.66) < 0.01
    assert data["optimal_wait_us"] == 1000.0


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "baqudit", "levels", "--out", str(tmp_path / "m")],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert (tmp_path / "m" / "levels.csv").exists()


def test_compile_order_and_weights_flags(tmp_path):
    assert cli.main(["compile", "--target", "hadamard2", "--order", "3,1,2", "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["final_count"] <= 7
    assert cli.main(["compile", "--target", "hadamard2", "--order", "1,1,2", "--out", str(tmp_path / "p")]) == 2
    assert cli.main(["transitions", "--geometry-weights", "5=1", "--out", str(tmp_path / "w")]) == 2
    assert cli.main(["transitions", "--geometry-weights=-1=0.5,1=2", "--out", str(tmp_path / "w2")]) == 0
