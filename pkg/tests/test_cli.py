import json

import numpy as np
import pytest

from sbpls.cli import main
from sbpls.ground_state import read_profile


def _summary(out):
    return json.loads((out / "summary.json").read_text())


def test_ground_state(tmp_path, capsys):
    assert main(["ground-state", "--p", "2", "--out", str(tmp_path)]) == 0
    header, r, u = read_profile(tmp_path / "profile.txt")
    assert header["p"] == 2.0 and r[0] == 0 and np.all(np.diff(u) < 0)
    consts = json.loads((tmp_path / "constants.json").read_text())
    assert consts["u0"] == pytest.approx(4.1917, abs=1e-3)
    s = _summary(tmp_path)["ground-state"]
    assert s["pass"] and {"profile.txt", "constants.json"} <= set(s["artifacts"])
    assert "PASS  nehari identity" in capsys.readouterr().out


def test_kernel_check_then_report(tmp_path):
    assert main(["kernel-check", "--out", str(tmp_path), "--seed", "4"]) == 0
    rows = (tmp_path / "kernel_far_field.csv").read_text().splitlines()
    assert rows[0] == "r,bp,kappa,coulomb,inverse_r" and len(rows) == 3
    assert main(["ground-state", "--out", str(tmp_path)]) == 0
    assert main(["report", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["pass"] and set(_summary(tmp_path)) == {"kernel-check", "ground-state", "report"}


def test_bad_scenario_exit_2(tmp_path, capsys):
    assert main(["concentrate", "--scenario", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert main(["concentrate", "--out", str(tmp_path)]) == 2
    assert main(["expansion-study", "--scenario", "flat", "--out", str(tmp_path)]) == 2
    assert "needs --scenario" in capsys.readouterr().err


def test_invalid_scenario_exit_1(tmp_path):
    d = json.loads(json.dumps({"name": "bad", "p": 7.0, "V": {"c0": 1.0}, "regime": "flat"}))
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    assert main(["concentrate", "--scenario", str(path), "--out", str(tmp_path)]) == 1
    s = _summary(tmp_path)["concentrate"]
    assert not s["pass"]
    assert any(a["name"] == "scenario: exponent in (1, 5)" and not a["pass"] for a in s["assertions"])


def test_coarse_grid_is_refused(tmp_path, capsys):
    # h = 0.75 on the bundled box: the grid state leaks through the boundary
    code = main(["concentrate", "--scenario", "flat", "--out", str(tmp_path), "--grid-n", "32"])
    assert code == 1 and "LeakageError" in capsys.readouterr().err


def test_flat_concentration(tmp_path):
    code = main(["concentrate", "--scenario", "flat", "--out", str(tmp_path), "--eps-sweep", "0.3,0.2,0.15,0.1"])
    assert code == 0
    lines = (tmp_path / "concentration.csv").read_text().splitlines()
    assert lines[0] == "eps,xi1,xi2,xi3,dist,w_norm,resid" and len(lines) == 5
    assert (tmp_path / "u_finest.bin").exists()
    sc = json.loads((tmp_path / "scenario.json").read_text())
    assert sc["grid"]["n"] == 64 and sc["eps_sweep"] == [0.3, 0.2, 0.15, 0.1]
