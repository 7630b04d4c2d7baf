import json
import subprocess
import sys

import pytest

from closedpop.cli import main
from closedpop.data import SufficientStats
from closedpop.estimation import loglik_at


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "lo2.txt"
    assert main(["simulate", "--preset", "lo2", "--seed", "3", "--out", str(path)]) == 0
    return path


def test_fit_table(data_file, capsys):
    code = main(["fit", "--data", str(data_file), "--model", "Mh^2"])
    out = capsys.readouterr().out
    assert code == 0
    labels = [line.split()[0] for line in out.splitlines()[3:9]]
    assert labels == ["N", "p(1)", "p(2)", "psi(1,2)", "psi(2,1)", "alpha(1)"]
    assert "logL" in out and "AIC" in out and "N_hat" in out


def test_fit_json_round_trip_and_determinism(data_file, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (a, b):
        main(["fit", "--data", str(data_file), "--model", "Mth^2", "--format", "json", "--out", str(out), "--seed", "5"])
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    stats = SufficientStats.from_dict(doc["stats"])
    assert abs(loglik_at(stats, doc["model"], doc["theta"], doc["approach"]) - doc["loglik"]) < 1e-9


def test_conditional_fit_json(data_file, capsys):
    code = main(["fit", "--data", str(data_file), "--model", "Mh^2", "--approach", "conditional", "--format", "json"])
    doc = json.loads(capsys.readouterr().out)
    assert code == 0 and doc["approach"] == "conditional"
    stats = SufficientStats.from_dict(doc["stats"])
    assert abs(loglik_at(stats, doc["model"], doc["theta"], "conditional") - doc["loglik"]) < 1e-9


def test_boundary_exit_code(tmp_path, capsys):
    path = tmp_path / "all.txt"
    path.write_text("1 1\n" * 10)
    code = main(["fit", "--data", str(path), "--model", "M0"])
    out = capsys.readouterr().out
    assert code == 2
    n_row = [line for line in out.splitlines() if line.startswith("N ")][0]
    assert n_row.split()[-1] == "-"


def test_missing_file(capsys):
    assert main(["fit", "--data", "/no/such/file.txt", "--model", "M0"]) == 1
    assert "cannot read" in capsys.readouterr().err


def test_bad_model(data_file, capsys):
    assert main(["fit", "--data", str(data_file), "--model", "Mx"]) == 1
    assert "Mx" in capsys.readouterr().err


def test_data_state_out_of_range(data_file, capsys):
    assert main(["fit", "--data", str(data_file), "--model", "M0", "--R", "1"]) == 1
    assert "outside" in capsys.readouterr().err


def test_compare(data_file, capsys):
    code = main(["compare", "--data", str(data_file), "--model", "M0^2,Mh^2", "--model", "Mt^2", "--model", "Mth^2"])
    out = capsys.readouterr().out.splitlines()
    assert code == 0
    assert out[0].split() == ["Model", "dAIC", "N_hat", "95%", "CI", "X2", "p-value"]
    rows = out[2:]
    assert sorted(r.split()[0] for r in rows) == ["M0^2", "Mh^2", "Mt^2", "Mth^2"]
    deltas = [float(r.split()[1]) for r in rows]
    assert deltas == sorted(deltas) and deltas[0] == 0


def test_compare_single_and_mixed(data_file, capsys):
    main(["compare", "--data", str(data_file), "--model", "Mh^2", "--format", "json"])
    rows = json.loads(capsys.readouterr().out)
    assert len(rows) == 1 and rows[0]["delta_aic"] == 0
    assert main(["compare", "--data", str(data_file), "--model", "M0,Mh^2", "--starts", "2"]) == 0
    assert "collapsed histories" in capsys.readouterr().err


def test_gof_outputs(data_file, capsys):
    assert main(["gof", "--data", str(data_file), "--model", "Mh^2", "--format", "csv"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "component,cell-id,observed,expected,contribution"
    assert main(["gof", "--data", str(data_file), "--model", "Mh^2"]) == 0
    assert "X2 =" in capsys.readouterr().out


def test_study_files_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["study", "--preset", "hi2", "--replicates", "2", "--seed", "4", "--starts", "2", "--model", "M0,Mh^2"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    for name in ("results.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    header = (a / "results.csv").read_text().splitlines()[0]
    assert header == "scenario,replicate,model,param,estimate,converged,boundary"


def test_unknown_preset(capsys):
    assert main(["study", "--preset", "nope"]) == 1
    assert "unknown preset" in capsys.readouterr().err


def test_module_entry_point(data_file):
    proc = subprocess.run(
        [sys.executable, "-m", "closedpop", "fit", "--data", str(data_file), "--model", "M0", "--format", "csv"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.splitlines()[0] == "parameter,estimate,se,lower,upper,boundary"
