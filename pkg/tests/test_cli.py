import json

import pytest

from miwlab import cli, constructor
from miwlab.constructor import ConstructionError


def body(text):
    return [line for line in text.splitlines() if not line.startswith("# generated")]


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_construct_to_file(tmp_path, capsys):
    p = tmp_path / "s.miw.json"
    code, out, _ = run(["construct", "--ell", "1", "--counts", "3,2", "--out", str(p)], capsys)
    assert code == 0
    doc = json.loads(p.read_text())
    assert len(doc["points"]) == 5 and doc["counts"] == [3, 2]
    assert doc["miwlab"]["config"]["counts"] == [3, 2] and doc["miwlab"]["version"]
    assert "residuals:" in out


def test_stdout_artifact_keeps_summary_on_stderr(capsys):
    code, out, err = run(["construct", "--ell", "0", "--counts", "3"], capsys)
    assert code == 0
    assert json.loads(out)["points"] == pytest.approx([-1.0, 0.0, 1.0], abs=1e-12)
    assert "residuals:" in err


def test_simulate_from_sequence_file(tmp_path, capsys):
    seq = tmp_path / "s.miw.json"
    traj = tmp_path / "traj.csv"
    assert run(["construct", "--ell", "1", "--counts", "3,2", "--out", str(seq)], capsys)[0] == 0
    code, out, _ = run(["simulate", "--init", str(seq), "--dt", "1e-2", "--t-max", "1", "--stride", "10",
                        "--out", str(traj)], capsys)
    assert code == 0
    lines = traj.read_text().splitlines()
    assert lines[0].startswith("# miwlab") and lines[2] == "t,x1,x2,x3,x4,x5,p1,p2,p3,p4,p5,H"
    assert len(lines) == 3 + 11
    assert "energy drift" in out


def test_rates_rows_and_fit(tmp_path, capsys):
    p = tmp_path / "rates.csv"
    code, out, _ = run(["rates", "--ell", "0", "--n-grid", "8:64:2", "--jobs", "1", "--out", str(p)], capsys)
    assert code == 0
    rows = [r for r in p.read_text().splitlines() if not r.startswith("#")]
    assert rows[0].startswith("N,ell,counts,wasserstein") and len(rows) == 5
    assert "slope=" in out


def test_reruns_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run(["rates", "--ell", "1", "--n-grid", "8:32:2", "--jobs", "1", "--out", str(p)], capsys)[0] == 0
    ta = a.read_text().replace(str(a), "X")
    tb = b.read_text().replace(str(b), "X")
    assert body(ta) == body(tb)


def test_jobs_do_not_change_rows(tmp_path, capsys):
    outs = []
    for jobs in ("1", "2"):
        p = tmp_path / f"r{jobs}.csv"
        assert run(["rates", "--ell", "1", "--n-grid", "8:64:2", "--jobs", jobs, "--out", str(p)], capsys)[0] == 0
        outs.append([r for r in p.read_text().splitlines() if not r.startswith("#")])
    assert outs[0] == outs[1]


def test_center_and_stein_and_gradient(tmp_path, capsys):
    assert run(["center", "--n-grid", "8:32:2", "--jobs", "1", "--out", str(tmp_path / "c.csv")], capsys)[0] == 0
    assert "N,x_center,grad_center,slope_estimate" in (tmp_path / "c.csv").read_text()
    code, out, _ = run(["stein", "--ell", "1", "--region", "1", "--h", "tanh", "--samples", "5"], capsys)
    assert code == 0 and "x,g,gp,gpp,residual" in out
    for cmd in ("verify", "wasserstein", "gaps", "gradient"):
        code, out, _ = run([cmd, "--ell", "1", "--n", "10"], capsys)
        assert code == 0 and json.loads(out)["miwlab"]["config"]["command"] == cmd


def test_exit_code_config(capsys):
    assert run(["construct", "--ell", "1", "--counts", "3"], capsys)[0] == cli.EXIT_CONFIG
    assert run(["construct", "--ell", "1"], capsys)[0] == cli.EXIT_CONFIG
    assert run(["center", "--n-grid", "9:27:3"], capsys)[0] == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as exc:
        cli.main(["construct", "--bogus"])
    assert exc.value.code == cli.EXIT_CONFIG


def test_exit_code_io(tmp_path, capsys):
    code, _, err = run(["verify", "--in", str(tmp_path / "missing.miw.json")], capsys)
    assert code == cli.EXIT_IO and "i/o error" in err


def test_exit_code_construction(monkeypatch, capsys):
    def fail(state, counts):
        raise ConstructionError("no bracket", {"counts": counts})

    monkeypatch.setattr(cli, "construct", fail)
    code, _, err = run(["construct", "--ell", "1", "--counts", "3,2"], capsys)
    assert code == cli.EXIT_CONSTRUCTION and "construction failed" in err


def test_collision_exit_code(capsys):
    code, _, err = run(["simulate", "--x", "0,1", "--p", "5000,-5000", "--dt", "1e-3", "--t-max", "1"], capsys)
    assert code == cli.EXIT_CONSTRUCTION and "collided" in err


def test_tolerance_override_applies(monkeypatch, capsys):
    monkeypatch.setattr(constructor, "RESIDUAL_TOL", constructor.RESIDUAL_TOL)
    assert run(["construct", "--ell", "0", "--counts", "4", "--residual-tol", "1e-11"], capsys)[0] == 0
    assert constructor.RESIDUAL_TOL == 1e-11


def test_config_roundtrip():
    ns = cli.build_parser().parse_args(["simulate", "--x", "0,1", "--dt", "0.01", "--min-gap", "1e-8"])
    cfg = cli.config_from_args(ns)
    assert cfg.tolerances == {"min_gap": 1e-8}
    assert cli.ExperimentConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig.from_dict({"command": "construct", "nope": 1})


def test_parse_grid():
    assert cli.parse_grid("64:4096:2") == [64, 128, 256, 512, 1024, 2048, 4096]
    assert cli.parse_grid("50:3200:2")[-1] == 3200
    with pytest.raises(cli.ConfigError):
        cli.parse_grid("64:32:2")
