import json

import numpy as np
import pytest

from argocov.errors import ConfigError, IngestionError, ModelFileError
from argocov.fit import FitConfig, fit_semiparametric, two_step_fit
from argocov.kernels import colocated_curve
from argocov.models import CovarianceModel
from argocov.pipeline import (SyntheticConfig, data_hash, default_b4_theta, ingest_csv, load_fit, load_json_config,
                              save_fit, simulate, write_csv)

SMALL = dict(n_floats=3, depths=(10.0, 200.0, 900.0, 1500.0))
QUICK = FitConfig(max_evals=30, restarts=0, wls_max_evals=30, max_refinements=0)


def test_simulation_is_seeded():
    cfg = SyntheticConfig(theta=default_b4_theta(), **SMALL)
    a, b = simulate(cfg), simulate(cfg)
    assert data_hash(a) == data_hash(b)
    other = simulate(SyntheticConfig(theta=default_b4_theta(), seed=1, **SMALL))
    assert data_hash(other) != data_hash(a)
    assert len(a) == 12 and a.float_ids == ["0001", "0002", "0003"]


def test_zero_covariance_simulates_zeros():
    th = {k: 0.0 for k in default_b4_theta()}
    th.update(a_h=1 / 300, a_v=1 / 100)
    d = simulate(SyntheticConfig(theta=th, **SMALL))
    assert not np.any(d.temp) and not np.any(d.psal)


@pytest.mark.parametrize("kw", [dict(n_floats=0), dict(depths=(5.0, 1.0)), dict(lon_range=(-181.0, -170.0)),
                                dict(model="Q1"), dict(depth_jitter=-1.0), dict(n_floats=100, size_cap=100)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        simulate(SyntheticConfig(theta=default_b4_theta(), **kw))


def test_config_round_trip_and_bad_theta():
    cfg = SyntheticConfig(theta=default_b4_theta(), **SMALL)
    assert SyntheticConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        SyntheticConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        SyntheticConfig(theta={"a_h": 1.0}).theta_true()


def test_default_truth_has_depth_varying_correlation():
    kp = CovarianceModel.of("B4").kernel_params(CovarianceModel.of("B4").theta(**default_b4_theta()))
    curve = dict(colocated_curve(kp, 40.0, [0.0, 400.0, 2000.0], -175.0))
    assert curve[400.0] > curve[2000.0] + 0.2
    assert 0 < curve[2000.0] < 0.8


def test_csv_round_trip(tmp_path):
    d = simulate(SyntheticConfig(theta=default_b4_theta(), **SMALL))
    write_csv(d, tmp_path / "d.csv")
    back, rep = ingest_csv(tmp_path / "d.csv")
    assert data_hash(back) == data_hash(d)
    assert rep.n_rows == len(d) and not rep.dropped


def _write(path, rows, header="float_id,lat,lon,pres,temp,psal"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_ingest_drops_and_reports(tmp_path):
    rows = ["a,40,-175,10,1,2", "a,40,-175,2100,1,2", "b,95,0,10,1,2", "b,40,-180,10,1,nan"]
    rows += [f"c,41,-174,{p},0,0" for p in range(20, 1020, 10)] + ["d,41,-180,5,0,0"]
    d, rep = ingest_csv(_write(tmp_path / "x.csv", rows))
    assert [line for line, _ in rep.dropped] == [3, 4, 5]
    assert d.float_slice("d").observations[0].point.lon == 180.0
    assert len(d) == 1 + 100 + 1


def test_ingest_errors(tmp_path):
    with pytest.raises(IngestionError):
        ingest_csv(_write(tmp_path / "a.csv", ["a,1,2,3,4"], header="float_id,lat,lon,pres,temp"))
    with pytest.raises(IngestionError):
        ingest_csv(_write(tmp_path / "b.csv", ["a,40,-175,10,1,2", "a,oops,-175,20,1,2"]))
    with pytest.raises(IngestionError):
        ingest_csv(tmp_path / "missing.csv")
    with pytest.raises(IngestionError):
        ingest_csv(_write(tmp_path / "c.csv", ["a,40,-175,10,1,2", "a,40,-175,10,3,4"]))


def test_fit_file_round_trip_and_corruption(tmp_path):
    d = simulate(SyntheticConfig(theta=default_b4_theta(), **SMALL))
    fit = two_step_fit("I3", d, QUICK)
    path = tmp_path / "I3.model"
    save_fit(path, fit, d, seed=4)
    back = load_fit(path)
    assert back.theta_hat == fit.theta_hat and back.loglik == fit.loglik
    assert back.knots_used == fit.knots_used
    assert back.metadata["provenance"]["data_hash"] == data_hash(d)

    doc = json.loads(path.read_text())
    doc["payload"]["loglik"] += 1
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError, match="checksum"):
        load_fit(path)
    path.write_text('{"sha256": "x",\n "payload": ')
    with pytest.raises(ModelFileError, match="line 2"):
        load_fit(path)


def test_plugin_fit_files_need_data(tmp_path):
    d = simulate(SyntheticConfig(theta=default_b4_theta(), **SMALL))
    fit = fit_semiparametric("B2", d, cfg=QUICK)
    save_fit(tmp_path / "B2.model", fit, d)
    with pytest.raises(ModelFileError):
        load_fit(tmp_path / "B2.model")
    assert load_fit(tmp_path / "B2.model", d).loglik == fit.loglik


def test_json_config_errors(tmp_path):
    (tmp_path / "a.json").write_text("[1]")
    (tmp_path / "b.json").write_text("{")
    for name in ("a.json", "b.json", "none.json"):
        with pytest.raises(ConfigError):
            load_json_config(tmp_path / name)
