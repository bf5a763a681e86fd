import csv
import subprocess
import sys

import pytest

from cookiewalk.cli import main
from cookiewalk.experiments import build_id


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert capsys.readouterr().out.strip() == build_id()


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "cookiewalk.cli", "--version"], capture_output=True, text=True
    )
    assert out.returncode == 0 and out.stdout.startswith("cookiewalk ")


def test_env(tmp_path, capsys):
    out = tmp_path / "env.csv"
    assert main(["env", "--env-inline", "transient-example", "--n", "300", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "delta=1 " in text and "neg_cookies=1" in text
    r = rows(out)
    assert r[0] == ["j", "strength", "drift_prefix"] and len(r) == 301
    assert float(r[256][1]) == 0.25


def test_env_file(tmp_path, capsys):
    spec = tmp_path / "e.txt"
    spec.write_text("kind = finite\nstrengths = 3/4\n")
    assert main(["env", "--env", str(spec)]) == 0
    assert "delta=0.5 " in capsys.readouterr().out


def test_walk_csvs(tmp_path):
    trace, summary = tmp_path / "t.csv", tmp_path / "s.csv"
    code = main([
        "--threads", "2", "walk", "--env-inline", "finite:0.9", "--seed", "3", "--reps", "5",
        "--horizon", "50", "--trace-out", str(trace), "--summary-out", str(summary),
    ])
    assert code == 0
    t = rows(trace)
    assert t[0] == ["step", "position"] and len(t) == 52 and t[1] == ["0", "0"]
    s = rows(summary)
    assert s[0] == ["rep", "returns", "first_return", "max", "min", "final"]
    for r in s[1:]:
        assert (r[2] == "") == (r[1] == "0")
    assert s[1][5] == t[-1][1]


def test_blp(tmp_path, capsys):
    out = tmp_path / "b.csv"
    assert main(["blp", "--env-inline", "finite:3/4", "--n", "1", "--out", str(out)]) == 0
    r = rows(out)
    assert r[0] == ["m", "mass"] and float(r[1][1]) == 0.25 and float(r[2][1]) == 0.375
    mc = tmp_path / "mc.csv"
    assert main(["blp", "--env-inline", "finite:", "--n", "4", "--mode", "mc", "--reps", "10", "--out", str(mc)]) == 0
    r = rows(mc)
    assert r[0] == ["rep", "z1"] and len(r) == 11


def test_params(tmp_path, capsys):
    out = tmp_path / "p.csv"
    assert main(["params", "--env-inline", "finite:", "--n-grid", "1,10", "--out", str(out)]) == 0
    r = rows(out)
    assert r[0] == ["n", "mu", "rho", "nu", "theta", "eps_used"]
    assert [x[0] for x in r[1:]] == ["1", "10"]
    assert abs(float(r[2][3]) - 2) < 1e-8


def test_classify_exit_codes(tmp_path, capsys):
    assert main(["classify", "--env-inline", "finite:5/6,5/6,5/6"]) == 0
    assert "verdict=TransientRight" in capsys.readouterr().out
    assert main(["classify", "--env-inline", "transient-example"]) == 2
    assert "verdict=Undetermined" in capsys.readouterr().out
    assert main(["classify", "--env-inline", "finite:1.5"]) == 1
    assert "error:" in capsys.readouterr().err
    assert main(["classify", "--env", str(tmp_path / "missing.txt")]) == 1


def test_classify_certificate_csv(tmp_path, capsys):
    out = tmp_path / "c.csv"
    code = main([
        "classify", "--env-inline", "transient-example", "--certify", "2^7..2^9", "--out", str(out),
    ])
    assert code == 2
    lines = out.read_text().splitlines()
    assert lines[0] == "n,theta,threshold,margin"
    assert [line.split(",")[0] for line in lines[1:4]] == ["128", "256", "512"]
    assert all(float(line.split(",")[3]) > 0 for line in lines[1:4])
    assert lines[4].startswith("# verdict=Undetermined") and "all_positive=1" in lines[4]


def test_bad_grid_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["classify", "--env-inline", "finite:", "--certify", "9,3"])
    assert info.value.code == 2


def test_experiment(tmp_path, capsys):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text(
        "experiment = params\nenv = finite:3/4\nn_grid = 2^4..2^6\nout_dir = "
        + str(tmp_path / "out") + "\n"
    )
    assert main(["experiment", "--config", str(cfg)]) == 0
    text = (tmp_path / "out" / "params.csv").read_text().splitlines()
    assert text[0].startswith("# experiment=params table=params config=")
    assert text[1].startswith("n,mu,rho,nu,theta,")
    assert len(text) == 5
    assert main(["experiment", "--config", str(tmp_path / "nope.txt")]) == 1
