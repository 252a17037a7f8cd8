import json
import subprocess
import sys

import numpy as np
import pytest

from obstacle_relax import bench
from obstacle_relax.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main


def test_runspec_round_trip(tmp_path):
    spec = bench.RunSpec(n=7, theta="logarithmic", alphas=(0.1, 1e-2), solver="penalty", weighting="cell",
                         tol=1e-4, seed=3, deterministic=True, warm_start=False)
    assert spec.theta == "log"
    path = tmp_path / "spec.json"
    spec.save(path)
    assert bench.RunSpec.load(path) == spec
    with pytest.raises(ValueError):
        bench.RunSpec.from_dict({**spec.to_dict(), "colour": "red"})


@pytest.mark.parametrize("kwargs", [{"n": 1}, {"alphas": (1e-2, 1e-1)}, {"alphas": (0.0,)}, {"solver": "ipopt"},
                                    {"weighting": "simpson"}, {"theta": "cos"}, {"tol": -1.0}])
def test_runspec_validation(kwargs):
    with pytest.raises(ValueError):
        bench.RunSpec(**kwargs)


def test_table_csv_and_report_round_trip(tmp_path):
    rows = [bench.TableRow(0.1, 1.234567891e-9, 8.76543e-3, 218.98302093, 124, 1532.25, True),
            bench.TableRow(1e-2, 0.0, 8.4e-5, 220.0957, 14, 80.0, False)]
    path = tmp_path / "t.csv"
    bench.write_table(rows, path)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(bench.TABLE_FIELDS)
    back = bench.read_table(path)
    for a, b in zip(rows, back):
        for k in bench._FLOAT_FIELDS:
            assert getattr(b, k) == pytest.approx(getattr(a, k), rel=5e-6)
        assert (a.iterations, a.converged) == (b.iterations, b.converged)
    assert "1.23457e-09" in path.read_text()

    report = {"rows": [r.__dict__ for r in rows], "x": np.float64(0.1) + 0.2, "arr": np.arange(3)}
    bench.write_report(report, tmp_path / "r.json")
    again = bench.read_report(tmp_path / "r.json")
    assert again["x"] == 0.1 + 0.2
    assert again["rows"][0]["objective"] == rows[0].objective
    assert again["arr"] == [0, 1, 2]


def test_read_table_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("alpha,objective\n0.1,1.0\n")
    with pytest.raises(ValueError):
        bench.read_table(path)


def test_central_difference():
    f = lambda x: np.array([x[0] ** 3, np.sin(x[1])])
    x = np.array([1.5, 0.3])
    np.testing.assert_allclose(bench.central_difference(f, x, np.array([1.0, 0.0])), [6.75, 0.0], atol=1e-8)
    zero = bench.central_difference(lambda x: np.array([np.nan, 1.0]), x, np.zeros(2))
    assert np.array_equal(zero, np.zeros(2))


def test_gradcheck_report():
    rep = bench.run_gradcheck(bench.RunSpec(n=5, alphas=(0.1,), seed=1))
    assert rep["passed"] and set(rep["errors"]) == {"objective", "state_jacobian", "complementarity_jacobian",
                                                     "penalized_gradient", "reduced_gradient"}
    with pytest.raises(ValueError):
        bench.run_gradcheck(bench.RunSpec(n=13))


def test_run_table_writes_outputs(tmp_path):
    out = tmp_path / "tab.csv"
    rows, report = bench.run_table(bench.RunSpec(n=6, alphas=(0.1, 1e-2), out=str(out)))
    assert [r.alpha for r in rows] == [0.1, 1e-2]
    assert report["all_converged"]
    saved = json.loads(out.with_suffix(".json").read_text())
    assert saved["spec"]["n"] == 6 and saved["solver_config"]["tol"] == 1e-3
    assert saved["rows"][1]["objective"] == rows[1].objective
    assert all(s["kkt"]["stationarity_v"] <= 1e-3 for s in saved["stages"])
    assert len(bench.read_table(out)) == 2


def test_cli_table_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "cli.csv"
    assert main(["table", "--n", "5", "--alpha", "0.1,0.01", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out.strip().splitlines()
    assert printed == out.read_text().strip().splitlines()
    assert main(["table", "--n", "5", "--alpha", "0.01,0.1"]) == EXIT_USAGE
    assert main(["table", "--n", "5", "--alpha", "abc"]) == EXIT_USAGE
    assert main(["table", "--n", "1"]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE
    assert main(["table", "--n", "6", "--alpha", "1e-3", "--max-iter", "2"]) == EXIT_FAIL


def test_cli_empty_schedule(capsys):
    assert main(["table", "--n", "5", "--alpha", ""]) == EXIT_OK
    assert capsys.readouterr().out.strip() == ",".join(bench.TABLE_FIELDS)


def test_cli_gradcheck_and_solve_dump(tmp_path, capsys):
    assert main(["gradcheck", "--n", "4", "--out", str(tmp_path / "g.json")]) == EXIT_OK
    assert json.loads((tmp_path / "g.json").read_text())["passed"] is True
    dump = tmp_path / "fields.txt"
    assert main(["solve", "--n", "5", "--alpha", "0.1", "--dump", str(dump)]) == EXIT_OK
    lines = dump.read_text().splitlines()
    assert lines[0].split() == ["#", "x1", "x2", "y", "v", "xi", "psi"]
    assert len(lines) == 1 + 36


def test_cli_oracle(capsys):
    assert main(["oracle", "--n", "6", "--alpha", "0.1,0.01,0.001"]) == EXIT_OK
    assert "distance nonincreasing: True" in capsys.readouterr().out


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "obstacle_relax", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("table", "gradcheck", "oracle", "calibrate", "solve"):
        assert cmd in res.stdout
