"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also collected into a summary section at the end of the run.
"""
from __future__ import annotations

import csv
import filecmp
import json
import math
import time
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest

from argocov.cli import main as cli_main
from argocov.core import GeoPoint, ProfileDataset
from argocov.fit import FitConfig, LikelihoodEvaluator, aic, staged_fit_bivariate
from argocov.kernels import DiffOpParams, MaternParams, diffop_cross_cov
from argocov.linalg import PD_FLOOR, JITTER_LADDER, assemble, chol_loglik, cholesky_with_jitter, nearest_pd_fix
from argocov.models import CovarianceModel
from argocov.pipeline import SyntheticConfig, default_b4_theta, simulate
from argocov.predict import cokrige, holdout_split, predict_heldout
from argocov.splines import SplineSpec, basis_matrix, refine_knots

from conftest import record
from oracles import R_EARTH, gaussian_loglik, operator_fd

DATA_DIR = Path(__file__).parent / "data"


# --------------------------------------------------------------------------
# shared random draws

def random_diffop_theta(model: CovarianceModel, rng, beta=None):
    a_h = 10 ** rng.uniform(-3, -2)
    a_v = 10 ** rng.uniform(-2.7, -1.3)
    v = dict(a_h=a_h, a_v=a_v)
    for tag, sp in zip("TS", model.splines):
        v[f"a_{tag}"] = rng.normal() / (R_EARTH * a_h)
        v[f"b_{tag}"] = rng.normal() / (R_EARTH * a_h)
        for m in range(sp.M):
            v[f"c_{tag}_{m}"] = rng.normal() / a_v
    if model.id == "B4":
        v["beta12"] = rng.uniform(-1, 1) if beta is None else beta
    return model.theta(**v)


def random_matern_theta(model: CovarianceModel, rng):
    v = dict(sigma2_T=10 ** rng.uniform(-2, 1), sigma2_S=10 ** rng.uniform(-3, 0),
             a_h=10 ** rng.uniform(-3, -2), a_v=10 ** rng.uniform(-2.7, -1.3))
    if model.id == "B1":
        v["beta12"] = rng.uniform(-1, 1)
    return model.theta(**v)


def random_theta(model, rng):
    return random_diffop_theta(model, rng) if model.spec.family == "diffop" else random_matern_theta(model, rng)


def random_points(rng, n, span=10.0):
    return [GeoPoint(rng.uniform(40 - span / 2, 40 + span / 2), rng.uniform(-175 - span / 2, -175 + span / 2),
                     rng.uniform(0, 2000)) for _ in range(n)]


# --------------------------------------------------------------------------
# 1. operator covariance against finite differences of the base Matérn

def test_criterion_01_operator_covariance_matches_finite_differences():
    rng = np.random.default_rng(101)
    sp = SplineSpec()
    t0 = time.perf_counter()
    errs = []
    for _ in range(100):
        a_h = 10 ** rng.uniform(-3, -2)
        a_v = 10 ** rng.uniform(-2.7, -1.3)
        beta = rng.uniform(-1, 1)
        a = rng.normal(size=2) / (R_EARTH * a_h)
        b = rng.normal(size=2) / (R_EARTH * a_h)
        w = tuple(rng.normal(size=sp.M) / a_v for _ in range(2))
        theta = DiffOpParams(MaternParams(nu=(2.0, 2.0), beta12=beta, a_h=a_h, a_v=a_v),
                             tuple(a), tuple(b), (sp, sp), w)
        i, j = (int(x) for x in rng.integers(0, 2, size=2))
        # second point at a scaled separation in [0.05, 3], i.e. away from zero lag
        while True:
            p1 = GeoPoint(rng.uniform(-60, 60), rng.uniform(-179, 179), rng.uniform(0, 2000))
            u = rng.normal(size=3)
            u *= rng.uniform(0.05, 3.0) / np.linalg.norm(u)
            lat2 = p1.lat + math.degrees(u[0] / (R_EARTH * a_h))
            lon2 = p1.lon + math.degrees(u[1] / (R_EARTH * a_h * math.cos(math.radians(p1.lat))))
            pres2 = p1.pres + u[2] / a_v
            if -80 < lat2 < 80 and -180 < lon2 <= 180 and 0 <= pres2 <= 2000:
                break
        p2 = GeoPoint(lat2, lon2, pres2)
        got = diffop_cross_cov(i, j, p1, p2, theta)
        v1 = (a[i], b[i], float(theta.c_at(i, p1.pres)[0]))
        v2 = (a[j], b[j], float(theta.c_at(j, p2.pres)[0]))
        s1 = (math.radians(p1.lat), math.radians(p1.lon), p1.pres)
        s2 = (math.radians(p2.lat), math.radians(p2.lon), p2.pres)
        ref = operator_fd(2.0, 1.0 if i == j else beta, a_h, a_v, s1, v1, s2, v2)
        errs.append(abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    worst = max(errs)
    ok = worst <= 1e-4 and elapsed < 10.0
    record(1, ok, f"max relative error {worst:.2e} (<= 1e-4) over 100 draws in {elapsed:.2f} s (< 10 s)")
    assert worst <= 1e-4
    assert elapsed < 10.0


# --------------------------------------------------------------------------
# 2. positive definiteness of assembled matrices

def test_criterion_02_assembled_covariances_are_positive_definite():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst = {}
    for mid in ("I1", "I3", "B1", "B3", "B4"):
        model = CovarianceModel.of(mid)
        ratios = []
        for _ in range(50):
            S = assemble(model, random_theta(model, rng), random_points(rng, 30)).values
            w = np.linalg.eigvalsh(S)
            ratios.append(w[0] / w[-1])
        worst[mid] = min(ratios)
    elapsed = time.perf_counter() - t0
    ok = all(r > -1e-8 for r in worst.values()) and elapsed < 30.0
    detail = ", ".join(f"{m} {r:.1e}" for m, r in worst.items())
    record(2, ok, f"worst min/max eigenvalue ratio: {detail} (> -1e-8), {elapsed:.1f} s (< 30 s)")
    assert all(r > -1e-8 for r in worst.values()), worst
    assert elapsed < 30.0


# --------------------------------------------------------------------------
# 3. nested models

def test_criterion_03_nesting_identities():
    rng = np.random.default_rng(303)
    b4, i3, b3 = (CovarianceModel.of(m) for m in ("B4", "I3", "B3"))
    ll_gap = 0.0
    for _ in range(10):
        pts = random_points(rng, 20, span=4.0)
        n = len(pts)
        data = ProfileDataset.from_arrays([f"{k:04d}" for k in range(n)], [p.lat for p in pts],
                                          [p.lon for p in pts], [p.pres for p in pts],
                                          rng.normal(size=n), rng.normal(size=n))
        th4 = random_diffop_theta(b4, rng, beta=0.0)
        th3 = i3.theta(**{k: v for k, v in th4.as_dict().items() if k != "beta12"})
        l4 = LikelihoodEvaluator(b4, data)(th4).loglik
        l3 = LikelihoodEvaluator(i3, data)(th3).loglik
        ll_gap = max(ll_gap, abs(l4 - l3))

    cov_gap = 0.0
    shared_gap = 0.0
    for _ in range(10):
        pts = random_points(rng, 20, span=4.0)
        th4 = random_diffop_theta(b4, rng, beta=1.0)
        d = th4.as_dict()
        # symmetric operators: salinity uses the temperature coefficients
        for k in list(d):
            if k.startswith("c_S_") or k in ("a_S", "b_S"):
                d[k] = d[k.replace("_S", "_T")]
        th4 = b4.theta(**d)
        th3 = b3.theta(**{k: v for k, v in d.items() if k != "beta12"})
        S4 = assemble(b4, th4, pts).values
        S3 = assemble(b3, th3, pts).values
        cov_gap = max(cov_gap, float(np.max(np.abs(S4 - S3))))
        # one shared field: every block equals the temperature block
        n = len(pts)
        blocks = [S3[:n, n:], S3[n:, :n], S3[n:, n:]]
        shared_gap = max(shared_gap, max(float(np.max(np.abs(B - S3[:n, :n]))) for B in blocks))
    ok = ll_gap <= 1e-10 and cov_gap <= 1e-10 and shared_gap <= 1e-10
    record(3, ok, f"|loglik B4(beta=0) - I3| = {ll_gap:.1e}, |B4(beta=1) - B3| = {cov_gap:.1e}, "
                  f"block spread = {shared_gap:.1e} (all <= 1e-10)")
    assert ll_gap <= 1e-10
    assert cov_gap <= 1e-10
    assert shared_gap <= 1e-10


# --------------------------------------------------------------------------
# 4 and 7. recovery and held-out comparison on simulated data (shared fits)

RECOVERY_SEEDS = range(10)
RECOVERY_FIT = FitConfig(max_evals=700, restarts=0, wls_max_evals=700, max_refinements=0,
                         models=("I3", "B4"))


@pytest.fixture(scope="module")
def recovery_runs():
    runs = []
    t0 = time.perf_counter()
    for seed in RECOVERY_SEEDS:
        cfg = SyntheticConfig(theta=default_b4_theta(), seed=seed)
        data = simulate(cfg)
        train, test, fid = holdout_split(data, cfg.ref_point)
        fits = staged_fit_bivariate(train, RECOVERY_FIT)
        mse = {m: predict_heldout(fits[m], train, test, fid, 0.0).mse for m in ("I3", "B4")}
        runs.append(dict(seed=seed, n_train=len(train), beta=fits["B4"].theta_hat["beta12"],
                         dll=fits["B4"].loglik - fits["I3"].loglik, mse=mse))
    return runs, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_04_simulation_recovery(recovery_runs):
    runs, elapsed = recovery_runs
    in_band = sum(0.55 <= r["beta"] <= 0.95 for r in runs)
    improves = sum(r["dll"] > 2 for r in runs)
    ok = in_band >= 8 and improves >= 9 and elapsed < 600
    betas = ", ".join(f"{r['beta']:.3f}" for r in runs)
    record(4, ok, f"beta in [0.55, 0.95] for {in_band}/10 (>= 8) [{betas}]; "
                  f"loglik gain > 2 for {improves}/10 (>= 9); n_train {runs[0]['n_train']}; {elapsed:.0f} s (< 600 s)")
    assert in_band >= 8
    assert improves >= 9
    assert elapsed < 600


@pytest.mark.slow
def test_criterion_07_bivariate_prediction_beats_independent(recovery_runs):
    runs, _ = recovery_runs
    wins = sum(r["mse"]["B4"][0] <= r["mse"]["I3"][0] for r in runs)
    detail = ", ".join(f"{r['mse']['B4'][0]:.4f}/{r['mse']['I3'][0]:.4f}" for r in runs)
    record(7, wins >= 8, f"temperature MSE B4 <= I3 in {wins}/10 seeds (>= 8) [B4/I3: {detail}]")
    assert wins >= 8


# --------------------------------------------------------------------------
# 5. kriging interpolates and respects independence

def test_criterion_05_kriging_exactness_and_independence():
    data = simulate(SyntheticConfig(n_floats=4, depths=tuple(np.linspace(10, 1990, 12)),
                                    theta=default_b4_theta(), seed=5))
    b4 = CovarianceModel.of("B4")
    theta = b4.theta(**default_b4_theta())
    targets = [(data.points[k], v) for k in (0, 7, 20, 47) for v in (0, 1)]
    kr = cokrige(b4, theta, data, targets)
    truth = np.array([data.values(v)[k] for k in (0, 7, 20, 47) for v in (0, 1)])
    err = float(np.max(np.abs(kr.mean - truth)))
    var = float(np.max(kr.variance))

    train, test, _ = holdout_split(data, GeoPoint(40.0, -175.0, 0.0))
    th0 = theta.with_values(beta12=0.0)
    tg = [(p, 0) for p in test.points]
    extra = [(p, 1, s) for p, s in zip(test.points, test.psal)]
    plain = cokrige(b4, th0, train, tg)
    with_s = cokrige(b4, th0, train, tg, extra)
    shift = float(np.max(np.abs(plain.mean - with_s.mean)))
    ok = err <= 1e-8 and var <= 1e-8 and shift <= 1e-10
    record(5, ok, f"interpolation error {err:.1e}, variance {var:.1e} (<= 1e-8); "
                  f"shift from colocated salinity at beta=0 {shift:.1e} (<= 1e-10)")
    assert err <= 1e-8
    assert var <= 1e-8
    assert shift <= 1e-10


# --------------------------------------------------------------------------
# 6. published table: AIC from log-likelihood

def _half_unit(text: str) -> Decimal:
    exp = Decimal(text).as_tuple().exponent
    return Decimal(5) * Decimal(10) ** (exp - 1)


def test_criterion_06_published_aic_consistency():
    with open(DATA_DIR / "published_fit_table.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    bad = []
    for r in rows:
        k = CovarianceModel.of(r["model"]).param_count
        ll = Decimal(r["loglik_e4"]) * 10**4
        computed = Decimal(str(aic(float(ll), k))) / 10**5
        # loglik rounding propagates as 2 * half-unit * 1e4 / 1e5 in AIC units
        tol = _half_unit(r["aic_e5"]) + 2 * _half_unit(r["loglik_e4"]) * 10**4 / 10**5
        if abs(computed - Decimal(r["aic_e5"])) > tol:
            bad.append(f"{r['location']}/{r['model']} printed {r['aic_e5']} computed {float(computed):.1f}")
    ok = len(rows) == 42 and not bad
    record(6, ok, f"{42 - len(bad)}/42 rows consistent within printed rounding"
                  + (f"; inconsistent: {'; '.join(bad)}" if bad else ""))
    assert len(rows) == 42
    assert not bad, bad


# --------------------------------------------------------------------------
# 8. log-determinant and eigenvalue repair

def test_criterion_08_logdet_and_repair():
    rng = np.random.default_rng(808)
    worst = 0.0
    for n in (2, 10, 50, 100, 250, 500):
        for _ in range(3):
            A = rng.normal(size=(n, n))
            S = A @ A.T / n + 0.05 * np.eye(n)
            z = rng.normal(size=n)
            res = chol_loglik(S, z)
            ref = float(np.sum(np.log(np.linalg.eigvalsh(S))))
            worst = max(worst, abs(res.logdet - ref) / abs(ref))
            assert abs(res.loglik - gaussian_loglik(S, z)) <= 1e-8 * abs(res.loglik)
    factored = 0
    first_rung = 0
    for n in (5, 30, 120, 300):
        for _ in range(5):
            A = rng.normal(size=(n, n))
            B = nearest_pd_fix(0.5 * (A + A.T), floor=PD_FLOOR)
            _, jit = cholesky_with_jitter(B)
            factored += 1
            # same expression as the first rung of the ladder, so the comparison is exact
            first_rung += jit <= JITTER_LADDER[0] * abs(float(np.mean(np.diag(B))))
    ok = worst <= 1e-8 and first_rung == factored == 20
    record(8, ok, f"logdet relative error {worst:.1e} (<= 1e-8) up to 500x500; "
                  f"{factored}/20 repaired matrices factored, {first_rung}/20 at jitter "
                  f"<= {JITTER_LADDER[0]:.0e} x mean diagonal")
    assert worst <= 1e-8
    assert first_rung == factored == 20


# --------------------------------------------------------------------------
# 9. spline basis

def test_criterion_09_partition_of_unity_and_refinement():
    grid = np.linspace(0, 2000, 2001)
    worst = 0.0
    for spec in (SplineSpec(), SplineSpec(degree=1), SplineSpec(degree=2), refine_knots(SplineSpec())):
        worst = max(worst, float(np.max(np.abs(basis_matrix(spec, grid).sum(axis=1) - 1.0))))
    refined = refine_knots(SplineSpec()).knots
    expected = (0.0, 50.0, 100.0, 550.0, 1000.0, 1500.0, 2000.0)
    ok = worst <= 1e-12 and refined == expected
    record(9, ok, f"partition of unity error {worst:.1e} (<= 1e-12); refined knots {list(refined)}")
    assert worst <= 1e-12
    assert refined == expected


# --------------------------------------------------------------------------
# 10. end-to-end determinism

def _pipeline(root: Path) -> Path:
    root.mkdir()
    sim = {"n_floats": 6, "theta": "default", "seed": 3}
    (root / "sim.json").write_text(json.dumps(sim))
    fit = {"max_evals": 80, "restarts": 0, "wls_max_evals": 80, "max_refinements": 0,
           "models": ["I1", "B1", "I3", "B4"], "seed": 3}
    (root / "fit.json").write_text(json.dumps(fit))
    steps = [
        ["simulate", "--config", str(root / "sim.json"), "--out", str(root / "data.csv")],
        ["fit", "--data", str(root / "data.csv"), "--config", str(root / "fit.json"), "--ref-lat", "40",
         "--ref-lon", "-175", "--holdout", "nearest", "--out", str(root / "fits")],
        ["predict", "--fits", str(root / "fits"), "--data", str(root / "data.csv"),
         "--report", str(root / "report.csv")],
        ["compare", "--report", str(root / "report.csv"), "--out", str(root / "table.txt")],
    ]
    for argv in steps:
        assert cli_main(argv) == 0, argv
    return root


@pytest.mark.slow
def test_criterion_10_pipeline_is_deterministic(tmp_path):
    a = _pipeline(tmp_path / "run_a")
    b = _pipeline(tmp_path / "run_b")
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    differ = [str(f) for f in files if not filecmp.cmp(a / f, b / f, shallow=False)]
    ok = "report.csv" in {f.name for f in files} and not differ
    record(10, ok, f"{len(files) - len(differ)}/{len(files)} output files byte-equal across two runs"
                   + (f"; differing: {differ}" if differ else ""))
    assert not differ
