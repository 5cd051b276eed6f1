import json
import subprocess
import sys

import numpy as np
import pytest

from pslip.cli import RunConfig, ConfigError, main


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def strip_timing(obj):
    if isinstance(obj, dict):
        return {k: strip_timing(v) for k, v in obj.items() if "time" not in k}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def test_exponents(capsys):
    code, out = run(capsys, "exponents", "--p", "1.8", "--n", "3")
    assert code == 0
    assert "q_hat=1.84615" in out.out and "r(q_hat)=2 " in out.out
    # r(2) = 3*2 / (3*0.8 + 2*0.2)
    assert "r(2)=2.14286" in out.out
    code, out = run(capsys, "exponents", "--p", "1.5", "--n", "3")
    assert "r(2)=2.4" in out.out


def test_mms_order_p2(capsys, tmp_path):
    code, out = run(capsys, "mms", "--p", "2", "--mu", "0", "--grids", "16", "32", "64", "--out", str(tmp_path))
    assert code == 0
    order = float(out.out.strip().splitlines()[-1].split()[-1])
    assert order >= 1.9
    assert json.loads((tmp_path / "mms.json").read_text())["observed_order"] == pytest.approx(order, abs=1e-3)


def test_solve_zero_forcing(capsys, tmp_path):
    code, out = run(capsys, "solve", "--forcing", "zero", "--grid", "8", "--out", str(tmp_path))
    assert code == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["solve"]["corrections"] == 0 and report["status"] == "ok"
    data = np.loadtxt(tmp_path / "u.csv", delimiter=",", skiprows=1)
    assert data.shape == (100, 4) and np.all(data[:, 2:] == 0)
    assert (tmp_path / "u_D.csv").exists()


def test_reproducible_reports(capsys, tmp_path):
    reports = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        assert run(capsys, "solve", "--grid", "12", "--p", "1.8", "--mu", "0.1", "--out", str(out))[0] == 0
        reports.append(strip_timing(json.loads((out / "report.json").read_text())))
        reports[-1]["config"].pop("out")
    assert reports[0] == reports[1]
    a, b = ((tmp_path / f"r{k}" / "u.csv").read_bytes() for k in range(2))
    assert a == b


def test_dump_config_roundtrip(capsys, tmp_path):
    code, out = run(capsys, "solve", "--p", "1.75", "--grid", "20", "--bc", "bardos", "--dump-config")
    assert code == 0
    path = tmp_path / "cfg.json"
    path.write_text(out.out)
    cfg = RunConfig.load(path)
    assert cfg == RunConfig(p=1.75, grid=20, bc="bardos")
    code, out2 = run(capsys, "solve", "--config", str(path), "--dump-config")
    assert out2.out == out.out


def test_config_errors(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"p": 1.8, "colour": "red"}))
    assert run(capsys, "solve", "--config", str(bad))[0] == 1
    assert run(capsys, "solve", "--p", "2.5")[0] == 1
    assert run(capsys, "solve", "--bc", "dirichlet")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "solve", "--mu", "0", "--p", "1.8", "--grid", "8")[0] == 1
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"grids": [16]})
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")


def test_gate_violation_with_divergence_exits_2(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"p": 1.2, "mu": 1e-2, "grid": 10, "max_iter": 2, "n_samples": 5}))
    code, out = run(capsys, "solve", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 2
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert report["status"] == "diverged" and report["solve"]["gate_satisfied"] is False


def test_other_commands(capsys, tmp_path):
    assert run(capsys, "continuation", "--grid", "12", "--p", "1.9", "--out", str(tmp_path / "c"))[0] == 0
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert len(rep["steps"]) == 9 and rep["trace"]["uniformity_ratio"] < 2.5
    assert run(capsys, "linsolve", "--grid", "12", "--out", str(tmp_path / "l"))[0] == 0
    assert run(capsys, "constants", "--grid", "12", "--p", "1.8", "--out", str(tmp_path / "k"))[0] == 0
    rep = json.loads((tmp_path / "k" / "constants.json").read_text())
    assert rep["constants"]["Cq_disc"] > 0 and rep["gate_satisfied"] in (True, False)
    assert sorted(rep["Cq_by_q"]) == ["2.0", "3.0", "4.0", "6.0"]
    code, out = run(capsys, "identities", "--out", str(tmp_path / "i"))
    assert code == 0 and "expansion" in out.out
    assert (tmp_path / "i" / "identities.txt").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pslip", "exponents", "--p", "1.9", "--n", "2"],
                         capture_output=True, text=True, check=True)
    assert "r(n)=2" in res.stdout
