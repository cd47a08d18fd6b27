import csv
import json

import numpy as np
import pytest

from psfuse import io as pio
from psfuse.cli import EXIT_OK, EXIT_USAGE, main
from psfuse.errors import InputError


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--table1", "5", "--points", "60", "--areas", "4", "--reps", "2",
                 "--seed", "3", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def fitted(simulated, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    rep = simulated / "rep_0"
    code = main(["fit", "--points", str(rep / "points.csv"), "--areas", str(rep / "areas.csv"),
                 "--geometry", str(rep / "areas_geom.txt"), "--model", "PSmelding", "--mesh-edge", "0.1",
                 "--out", str(out)])
    assert code == EXIT_OK
    return out


def test_simulate_file_set(simulated):
    rep = simulated / "rep_1"
    for name in ("points.csv", "areas.csv", "areas_geom.txt", "truth.csv", "meta.json"):
        assert (rep / name).exists()
    assert len(_rows(rep / "points.csv")) == 60
    assert len(_rows(rep / "areas.csv")) == 4
    assert len(_rows(rep / "truth.csv")) == 2500
    assert json.loads((rep / "meta.json").read_text())["sampling"] == "preferential"


def test_simulate_is_deterministic(simulated, tmp_path):
    assert main(["simulate", "--table1", "5", "--points", "60", "--areas", "4", "--reps", "1",
                 "--seed", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "rep_0" / "points.csv").read_text() == (simulated / "rep_0" / "points.csv").read_text()


def test_simulate_without_areas_and_free_parameters(tmp_path):
    assert main(["simulate", "--rho", "0.3", "--gamma", "0", "--areas", "0", "--points", "20",
                 "--out", str(tmp_path)]) == EXIT_OK
    rep = tmp_path / "rep_0"
    assert not (rep / "areas.csv").exists()
    meta = json.loads((rep / "meta.json").read_text())
    assert meta["config"]["range_rho"] == 0.3 and meta["sampling"] == "non-preferential"


def test_seed_environment_override(tmp_path, monkeypatch):
    monkeypatch.setenv("PSFUSE_SEED", "99")
    main(["simulate", "--table1", "2", "--areas", "0", "--points", "10", "--seed", "1", "--out", str(tmp_path / "a")])
    monkeypatch.delenv("PSFUSE_SEED")
    main(["simulate", "--table1", "2", "--areas", "0", "--points", "10", "--seed", "99", "--out", str(tmp_path / "b")])
    assert (tmp_path / "a/rep_0/points.csv").read_text() == (tmp_path / "b/rep_0/points.csv").read_text()


def test_fit_outputs(fitted):
    info = json.loads((fitted / "fit.json").read_text())
    assert info["variant"] == "psmelding"
    assert info["hyper_names"] == ["log_tau_s", "log_tau_B", "log_sigma", "log_range", "gamma"]
    assert {"gamma", "sigma", "range", "tau_s", "tau_B"} <= set(info["hyperparameters"])
    assert "theta_micro" in info["derived"] and "mu" in info["fixed_effects"]
    assert info["diagnostics"]["converged"] is True
    assert abs(sum(g["weight"] for g in info["grid"]) - 1) < 1e-12
    rows = _rows(fitted / "field.csv")
    assert list(rows[0]) == ["node", "mean", "sd"]
    assert all(float(r["sd"]) > 0 for r in rows)


def test_melding_fit_has_no_gamma(simulated, tmp_path):
    rep = simulated / "rep_0"
    assert main(["fit", "--points", str(rep / "points.csv"), "--model", "melding", "--mesh-edge", "0.125",
                 "--out", str(tmp_path)]) == EXIT_OK
    info = json.loads((tmp_path / "fit.json").read_text())
    assert "gamma" not in info["hyperparameters"] and "gamma" not in info["hyper_names"]


def test_predict_grid_and_threshold(fitted, tmp_path):
    out = tmp_path / "pred.csv"
    assert main(["predict", "--fit", str(fitted / "fit.json"), "--grid", "50x50", "--threshold", "0.5",
                 "--out", str(out)]) == EXIT_OK
    rows = _rows(out)
    assert len(rows) == 2500
    assert list(rows[0]) == ["x", "y", "mean", "sd", "exc_prob"]
    p = np.array([float(r["exc_prob"]) for r in rows])
    assert ((p >= 0) & (p <= 1)).all()


def test_predict_targets_out_of_domain(fitted, tmp_path, capsys):
    t = tmp_path / "targets.csv"
    t.write_text("x,y\n0.5,0.5\n7,7\n")
    code = main(["predict", "--fit", str(fitted / "fit.json"), "--targets", str(t), "--out", str(tmp_path / "p.csv")])
    assert code == EXIT_USAGE
    err = capsys.readouterr().err
    assert "error:" in err and "outside the mesh, rows [1]" in err
    assert not (tmp_path / "p.csv").exists()


def test_missing_value_names_file_and_line(tmp_path, capsys):
    p = tmp_path / "points.csv"
    p.write_text("x,y,value\n0.1,0.2,1.0\n0.3,0.4,\n")
    assert main(["fit", "--points", str(p), "--model", "melding", "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert f"{p}:3" in capsys.readouterr().err
    with pytest.raises(InputError, match=r":2: column 'x' is not a number"):
        pio.read_points_csv(_write(tmp_path / "bad.csv", "x,y,value\nfoo,1,2\n"))


def _write(path, text):
    path.write_text(text)
    return path


def test_usage_errors(tmp_path, capsys):
    assert main(["fit", "--out", str(tmp_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--areas", "7", "--out", str(tmp_path)])
    assert exc.value.code == EXIT_USAGE
    assert main(["simulate", "--table1", "5", "--rho", "0.3", "--out", str(tmp_path)]) == EXIT_USAGE


def test_config_file_is_strict(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"points": 15, "areas": 0, "bogus": 1}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert "bogus" in capsys.readouterr().err
    cfg.write_text(json.dumps({"points": 15, "areas": 0, "table1": 2}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert len(_rows(tmp_path / "o/rep_0/points.csv")) == 15


def test_pgm_writer(tmp_path):
    pio.write_pgm(tmp_path / "a.pgm", np.array([[0.0, 1.0], [2.0, 3.0]]))
    lines = (tmp_path / "a.pgm").read_text().splitlines()
    assert lines[0] == "P2" and lines[2] == "2 2" and lines[4] == "170 255" and lines[5] == "0 85"


def test_scenario_command(tmp_path):
    out = tmp_path / "sc"
    assert main(["scenario", "--table1", "5", "--models", "melding", "--points", "30", "--areas", "4",
                 "--reps", "1", "--mesh-edge", "0.125", "--out", str(out)]) == EXIT_OK
    rows = _rows(out / "scores.csv")
    assert [r["metric"] for r in rows] == ["mse", "mae", "wd"]
    assert rows[0]["model"] == "melding" and rows[0]["areas"] == "4"
    params = _rows(out / "params.csv")
    assert "gamma" not in {r["parameter"] for r in params}
    assert (out / "failures.csv").exists()
    assert (out / "heatmaps" / "rep_000_truth.pgm").exists()
