import csv
import json

import pytest

from argocov.cli import main

SIM = {"n_floats": 3, "depths": [10.0, 60.0, 150.0, 300.0, 500.0, 800.0, 1100.0, 1400.0, 1700.0, 1950.0], "theta": "default", "seed": 2}
FIT = {"max_evals": 30, "restarts": 0, "wls_max_evals": 30, "max_refinements": 0}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "sim.json").write_text(json.dumps(SIM))
    (tmp_path / "fit.json").write_text(json.dumps(FIT))
    assert main(["simulate", "--config", str(tmp_path / "sim.json"), "--out", str(tmp_path / "d.csv")]) == 0
    return tmp_path


def test_fit_predict_compare_curve(workdir, capsys):
    w = workdir
    assert main(["fit", "--data", str(w / "d.csv"), "--models", "I1,B4", "--config", str(w / "fit.json"),
                 "--ref-lat", "40", "--ref-lon", "-175", "--out", str(w / "fits")]) == 0
    meta = json.loads((w / "fits" / "fits.json").read_text())
    assert meta["models"] == ["B4", "I1"] and meta["holdout"]
    assert main(["predict", "--fits", str(w / "fits"), "--data", str(w / "d.csv"), "--report",
                 str(w / "r.csv")]) == 0
    assert (w / "pred_B4_S.csv").exists()
    assert main(["compare", "--report", str(w / "r.csv"), str(w / "r.csv")]) == 0
    assert "model" in capsys.readouterr().out
    assert main(["curve", "--fit", str(w / "fits" / "B4.model"), "--lat", "40", "--lon", "-175",
                 "--pres", "0:2000:500", "--out", str(w / "c.csv")]) == 0
    rows = list(csv.DictReader(open(w / "c.csv")))
    assert [float(r["pres"]) for r in rows] == [0, 500, 1000, 1500, 2000]
    assert main(["curve", "--fit", str(w / "fits" / "I1.model"), "--lat", "40", "--out", str(w / "c2.csv")]) == 2


def test_empirical_lattice(workdir):
    assert main(["empirical", "--data", str(workdir / "d.csv"), "--out", str(workdir / "lat.csv"),
                 "--dpres", "500"]) == 0
    header = (workdir / "lat.csv").read_text().splitlines()[0]
    assert header == "lat,lon,pres,sig2_T,sig2_S,rho"


def test_exit_codes(tmp_path, workdir):
    (tmp_path / "bad.json").write_text("{")
    assert main(["simulate", "--config", str(tmp_path / "bad.json"), "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "f")]) == 3
    assert main(["fit", "--data", str(workdir / "d.csv"), "--models", "Z1", "--out", str(tmp_path / "f")]) == 2
    assert main(["fit", "--data", str(workdir / "d.csv"), "--holdout", "nearest",
                 "--out", str(tmp_path / "f")]) == 2
    assert main(["curve", "--fit", str(workdir / "d.csv"), "--lat", "1", "--out", str(tmp_path / "c")]) == 3
    assert main(["curve", "--fit", "x", "--lat", "1", "--pres", "5:1", "--out", str(tmp_path / "c")]) in (2, 3)
