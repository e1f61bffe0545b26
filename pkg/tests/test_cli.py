import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from obstakl.cli import main


def _write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_solve_s5_writes_outputs(tmp_path):
    cfg = _write(tmp_path, "[problem]\nbuiltin = example_s5\n[grid]\nnt = 400\n[backend]\nbackend = lcp\nmethod = policy_iteration\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    sol = _rows(tmp_path / "solution.csv")
    assert list(sol[0]) == ["t", "x", "u", "grad_u"] and len(sol) == 401 * 8
    mu = _rows(tmp_path / "measure.csv")
    masses = np.array([float(r["mass"]) for r in mu])
    top = mu[int(np.argmax(masses))]
    assert float(top["t"]) == pytest.approx(1.0)
    assert masses.sum() == pytest.approx(masses[[float(r["t"]) == 1.0 for r in mu]].sum())
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["structural"]["ok"] and rep["minimality_integral"] > 0
    assert rep["atom_level"] == 200


def test_solve_unconstrained_has_no_measure(tmp_path):
    cfg = _write(tmp_path, "[problem]\nbuiltin = unconstrained_heat\n[grid]\nnx = 80\nnt = 40\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "measure.csv").read_text() == "t,x,mass\n"
    assert json.loads((tmp_path / "report.json").read_text())["total_mass"] == 0.0


@pytest.mark.parametrize(
    "text, needle",
    [
        ("[problem]\nbuiltin = american_put\nT = soon\n", "problem.T"),
        ("[problem]\nbuiltin = american_put\nT = -1\n", "problem.T"),
        ("[problem]\nbuiltin = american_put\nh = foo(x)\n", "unknown function"),
        ("[problem]\na = 1\n", "missing required field"),
        ("[problem\nbuiltin = x\n", "malformed"),
        ("[problem]\nbuiltin = nope\n", "unknown builtin"),
        ("[problem]\nbuiltin = american_put\n[backend]\nbackend = mc\n", "grid backend"),
    ],
)
def test_bad_config_exits_2(tmp_path, capsys, text, needle):
    cfg = _write(tmp_path, text)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert needle in capsys.readouterr().err


def test_missing_file_and_threads(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "absent.ini")]) == 2
    cfg = _write(tmp_path, "[problem]\nbuiltin = american_put\n")
    assert main(["compare", "--config", cfg, "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        main(["solve"])


def test_dt_cap_violation_exits_2(tmp_path):
    cfg = _write(tmp_path, "[problem]\nbuiltin = american_put\nf = -10*y\nlipschitz_L = 10\n[grid]\nnt = 4\n")
    assert main(["solve", "--config", cfg, "--out", str(tmp_path)]) == 2


COMPARE = """[problem]
builtin = american_put
[grid]
nx = 200
nt = 200
[backend]
compare = lcp,penalized,mc
probes = 0.9,1.1
N = 20000
m = 50
degree = 3
seed = 4
"""


def test_compare_coarse(tmp_path):
    cfg = _write(tmp_path, COMPARE)
    assert main(["compare", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "compare.csv")
    assert len(rows) == 6 and all(r["within"] == "1" for r in rows)
    lp = [r for r in rows if r["backend_a"] == "lcp" and r["backend_b"] == "penalized"]
    assert all(abs(float(r["difference"])) < 1e-3 for r in lp)


def test_compare_band_exceeded_exits_1(tmp_path):
    cfg = _write(tmp_path, COMPARE.replace("N = 20000", "N = 20000\nbias_band = 0").replace("nx = 200\nnt = 200", "nx = 20\nnt = 20"))
    assert main(["compare", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_compare_output_independent_of_threads(tmp_path):
    cfg = _write(tmp_path, COMPARE.replace("lcp,penalized,mc", "lcp,mc").replace("N = 20000", "N = 9000"))
    outs = []
    for threads in ("1", "4"):
        d = tmp_path / threads
        assert main(["compare", "--config", cfg, "--out", str(d), "--threads", threads]) == 0
        outs.append((d / "compare.csv").read_bytes())
    assert outs[0] == outs[1]


def test_repeated_solve_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, "[problem]\nbuiltin = continuous_h_semilinear\n[grid]\nnx = 60\nnt = 30\n")
    for d in ("a", "b"):
        assert main(["solve", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    for f in ("solution.csv", "measure.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    reports = [json.loads((tmp_path / d / "report.json").read_text()) for d in ("a", "b")]
    for r in reports:
        r["solve"].pop("wall_time")
    assert reports[0] == reports[1]


def test_convergence_without_obstacle_is_flat(tmp_path):
    cfg = _write(
        tmp_path,
        "[problem]\nbuiltin = unconstrained_heat\n[grid]\nnx = 60\nnt = 30\n[backend]\nschedule_kmax = 4\nrefinements = 1\n",
    )
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "penalty_convergence.csv")
    assert len(rows) == 5
    assert all(float(r["err_u_2"]) < 1e-8 and float(r["minimality"]) == 0.0 for r in rows)
    grid = _rows(tmp_path / "grid_refinement.csv")
    assert [int(r["nx"]) for r in grid] == [60, 121]


def test_convergence_continuous_obstacle(tmp_path):
    cfg = _write(
        tmp_path,
        "[problem]\nbuiltin = continuous_h_semilinear\n[grid]\nnx = 60\nnt = 30\n[backend]\nschedule_kmax = 10\nrefinements = 2\n",
    )
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "penalty_convergence.csv")
    for col in ("err_u_2", "err_grad_2"):
        vals = np.array([float(r[col]) for r in rows])
        assert np.all(np.diff(vals) <= 0)
    grid = _rows(tmp_path / "grid_refinement.csv")
    errs = [float(r["err_u_2_vs_finest"]) for r in grid]
    assert errs[0] > errs[1] > errs[2] == 0.0


def test_convergence_needs_four_levels(tmp_path):
    cfg = _write(tmp_path, "[problem]\nbuiltin = american_put\n[backend]\nschedule = 1,2,4\n")
    assert main(["convergence", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_console_entry_point(tmp_path):
    cfg = _write(tmp_path, "[problem]\nbuiltin = unconstrained_heat\n[grid]\nnx = 20\nnt = 10\n")
    proc = subprocess.run(
        [sys.executable, "-m", "obstakl.cli", "solve", "--config", cfg, "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
