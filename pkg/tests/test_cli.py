import json
import os
import subprocess
import sys

import numpy as np

from frkrem import io as fio
from frkrem.cli import EXIT_CODES, run_command
from frkrem.core import Measurements

from helpers import CLI_PIPELINE, run_cli_pipeline


def test_pipeline_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    a.mkdir()
    b.mkdir()
    codes_a, files_a = run_cli_pipeline(a)
    codes_b, files_b = run_cli_pipeline(b)
    assert codes_a == [0] * len(CLI_PIPELINE) == codes_b
    assert files_a.keys() == files_b.keys()
    # paths are embedded in some outputs; compare with the directory masked
    for name in files_a:
        assert files_a[name].replace(bytes(a), b"@") == files_b[name].replace(bytes(b), b"@"), name
    cv = json.loads(files_a["cv_frk.json"])
    assert cv["k"] == 5 and len(cv["fold_rmse"]) == 5 and "fold_time" not in cv
    grid = fio.read_grid(a / "cid_grid.csv")
    assert grid.cid_hat is not None and grid.shape == (28, 21)


def test_crossval_same_seed_same_report(tmp_path):
    data = tmp_path / "d.csv"
    assert run_command(["simulate", "--seed", "1", "--n-points", "500", "--out", str(data)]) == 0
    reports = []
    for i in range(2):
        out = tmp_path / f"cv{i}.json"
        argv = ["crossval", "--method", "frk", "--tau", "100", "--k", "5", "--seed", "1",
                "--max-iter", "30", "--data", str(data), "--report", str(out)]
        assert run_command(argv) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1]


def test_fit_moments_flags_non_pd(tmp_path):
    xs = np.arange(10) * 50.0
    g = np.array([(x, y) for y in xs for x in xs])
    v = np.random.default_rng(0).normal(-80, 3, len(g))
    fio.write_measurements(Measurements(np.repeat(g, 2, axis=0), np.repeat(v, 2)),
                           tmp_path / "dup.csv")
    report = tmp_path / "prop1.json"
    code = run_command(["fit-moments", "--data", str(tmp_path / "dup.csv"), "--tau", "100",
                        "--bins", "100", "--model", str(tmp_path / "m.json"),
                        "--report", str(report)])
    assert code == 0
    d = json.loads(report.read_text())
    assert d["diagnostics"]["k_hat_pd"] is False and d["model"] is None
    assert not (tmp_path / "m.json").exists()
    code = run_command(["fit-moments", "--data", str(tmp_path / "dup.csv"), "--tau", "100",
                        "--bins", "100", "--repair", "--model", str(tmp_path / "m.json"),
                        "--report", str(report)])
    assert code == 0 and (tmp_path / "m.json").exists()


def test_predict_without_model(tmp_path, capsys):
    code = run_command(["predict", "--model", str(tmp_path / "model.json"),
                        "--bbox", "0", "0", "10", "10"])
    assert code == EXIT_CODES["missing-model"]
    assert "missing-model" in capsys.readouterr().err


def test_usage_errors(capsys):
    assert run_command(["fit", "--data", "x.csv", "--bogus"]) == 2
    assert "usage error" in capsys.readouterr().err
    assert run_command([]) == 2
    assert run_command(["teleport"]) == 2


def test_categorised_failures(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y,rsrp\n0,0,abc\n")
    assert run_command(["fit", "--data", str(bad), "--tau", "100"]) == EXIT_CODES["parse-error"]
    assert "bad.csv:2" in capsys.readouterr().err
    good = tmp_path / "good.csv"
    good.write_text("x,y,rsrp\n0,0,-80\n10,0,-81\n0,10,-82\n10,10,-83\n5,5,-79\n")
    assert run_command(["fit", "--data", str(good)]) == EXIT_CODES["invalid-parameter"]
    cfg = tmp_path / "c.json"
    cfg.write_text('{"tau": 50, "mystery": 1}')
    assert run_command(["fit", "--data", str(good), "--config", str(cfg)]) == \
        EXIT_CODES["parse-error"]


def test_console_script_entry_point(tmp_path):
    env = dict(os.environ, FRKREM_LOG_LEVEL="ERROR")
    out = subprocess.run([sys.executable, "-m", "frkrem.cli", "--version"],
                         capture_output=True, text=True, env=env)
    assert out.returncode == 0 and out.stdout.startswith("frkrem ")
