"""Cokriging, leave-one-float-out evaluation and the model comparison table."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .core import GeoPoint, ProfileDataset, chordal_distance, as_coordinate_arrays, points_to_arrays
from .errors import InsufficientDataError, InvalidArgumentError, NotPositiveDefiniteError
from .fit import FitConfig, FitResult, fit_semiparametric, plugin_surface, staged_fit_bivariate
from .linalg import cholesky_with_jitter, cross_cov_items, nearest_pd_fix
from .models import VAR_TAGS, CovarianceModel, ParamVector

REPORT_HEADER = ["model", "loglik", "aic", "mse_T", "mse_S", "jitter", "knots_T", "knots_S"]
PREDICTION_HEADER = ["pres", "truth", "pred", "var"]


@dataclass(frozen=True)
class Kriged:
    mean: np.ndarray
    variance: np.ndarray
    jitter: float = 0.0


def _items(points, variables):
    arr = as_coordinate_arrays(points)
    return arr, np.asarray(variables, dtype=int)


def cokrige(model: CovarianceModel, theta: ParamVector, train: ProfileDataset,
            targets: Sequence[tuple[GeoPoint, int]],
            conditioning_extra: Sequence[tuple[GeoPoint, int, float]] | None = None) -> Kriged:
    """Gaussian conditional mean and variance of target items.

    The conditioning set is every training observation of both variables
    (variable-major) followed by ``conditioning_extra``.
    """
    if len(train) == 0:
        raise InsufficientDataError("cokriging needs training observations")
    n = len(train)
    lat = np.concatenate([train.lat, train.lat])
    lon = np.concatenate([train.lon, train.lon])
    pres = np.concatenate([train.pres, train.pres])
    var = np.repeat([0, 1], n)
    z = train.z()
    if conditioning_extra:
        ex_pts = [e[0] for e in conditioning_extra]
        el, eo, ep = points_to_arrays(ex_pts)
        lat, lon, pres = np.concatenate([lat, el]), np.concatenate([lon, eo]), np.concatenate([pres, ep])
        var = np.concatenate([var, [int(e[1]) for e in conditioning_extra]])
        z = np.concatenate([z, [float(e[2]) for e in conditioning_extra]])
    cond = (lat, lon, pres)
    S11 = cross_cov_items(model, theta, cond, var, cond, var)
    S11 = 0.5 * (S11 + S11.T)
    nug = np.array(model.nugget)[var]
    S11[np.diag_indices_from(S11)] += nug
    if model.spec.family == "plugin":
        try:
            L, jit = cholesky_with_jitter(S11, 0.0)
        except NotPositiveDefiniteError:
            L, jit = cholesky_with_jitter(nearest_pd_fix(S11), 0.0)
    else:
        L, jit = cholesky_with_jitter(S11, 0.0)
    tp, tv = _items([t[0] for t in targets], [t[1] for t in targets])
    S21 = cross_cov_items(model, theta, tp, tv, cond, var)
    prior = np.array([cross_cov_items(model, theta, _one(tp, k), [tv[k]], _one(tp, k), [tv[k]])[0, 0]
                      for k in range(len(tv))]) + np.array(model.nugget)[tv]
    W = solve_triangular(L, S21.T, lower=True, check_finite=False)
    w = solve_triangular(L, z, lower=True, check_finite=False)
    mean = W.T @ w
    variance = np.maximum(prior - np.sum(W * W, axis=0), 0.0)
    return Kriged(mean, variance, jit)


def _one(arrs, k):
    return tuple(a[k:k + 1] for a in arrs)


# --------------------------------------------------------------------------

def _id_key(fid: str):
    try:
        return (0, int(fid), fid)
    except ValueError:
        return (1, 0, fid)


def nearest_float(data: ProfileDataset, ref: GeoPoint) -> str:
    """Float whose shallowest observation is closest to ``ref`` (ties: smallest id)."""
    if not data.float_ids:
        raise InsufficientDataError("empty dataset")
    ref0 = GeoPoint(ref.lat, ref.lon, 0.0)
    return min(data.float_ids, key=lambda f: (chordal_distance(_surface(data.shallowest_point(f)), ref0),
                                              _id_key(f)))


def _surface(p: GeoPoint) -> GeoPoint:
    return GeoPoint(p.lat, p.lon, 0.0)


def distance_to_nearest_float(data: ProfileDataset, fid: str) -> float:
    p = _surface(data.shallowest_point(fid))
    others = [f for f in data.float_ids if f != fid]
    if not others:
        return math.nan
    return min(chordal_distance(p, _surface(data.shallowest_point(f))) for f in others)


def holdout_split(data: ProfileDataset, ref: GeoPoint) -> tuple[ProfileDataset, ProfileDataset, str]:
    if len(data.float_ids) < 2:
        raise InsufficientDataError("leave-one-float-out needs at least two floats")
    fid = nearest_float(data, ref)
    return data.without_float(fid), data.float_slice(fid), fid


@dataclass
class PredictionReport:
    model_id: str
    target_float: str
    pres: np.ndarray
    truth: np.ndarray        # (n, 2)
    predicted: np.ndarray    # (n, 2)
    variance: np.ndarray     # (n, 2)
    mse: tuple[float, float]
    distance_to_nearest_float: float
    jitter: float = 0.0
    metadata: dict = field(default_factory=dict)

    def write_csv(self, path, var: int) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PREDICTION_HEADER)
            for k in range(len(self.pres)):
                w.writerow([_fmt(self.pres[k]), _fmt(self.truth[k, var]), _fmt(self.predicted[k, var]),
                            _fmt(self.variance[k, var])])


def predict_heldout(fit: FitResult, train: ProfileDataset, test: ProfileDataset, fid: str,
                    distance: float) -> PredictionReport:
    """Predict each variable of ``test`` given training data and the other variable of ``test``."""
    pts = test.points
    truth = np.column_stack([test.temp, test.psal])
    pred = np.empty_like(truth)
    pvar = np.empty_like(truth)
    jit = 0.0
    for v in (0, 1):
        other = 1 - v
        extra = [(p, other, float(truth[k, other])) for k, p in enumerate(pts)]
        kr = cokrige(fit.model, fit.theta_hat, train, [(p, v) for p in pts], extra)
        pred[:, v], pvar[:, v] = kr.mean, kr.variance
        jit = max(jit, kr.jitter)
    mse = tuple(float(np.mean((pred[:, v] - truth[:, v]) ** 2)) for v in (0, 1))
    return PredictionReport(fit.model.id, fid, test.pres.copy(), truth, pred, pvar, mse, distance, jit)


def leave_one_float_out(model_fits: Mapping[str, FitResult] | Sequence[str], data: ProfileDataset,
                        ref: GeoPoint, cfg: FitConfig = FitConfig(), refit: bool = True
                        ) -> tuple[dict[str, PredictionReport], dict[str, FitResult]]:
    """Hold out the float nearest ``ref`` and predict it with every model.

    With ``refit`` the models are fitted again without the held-out float
    (``model_fits`` may then be just the model ids); otherwise the given fits
    are used as they are.
    """
    train, test, fid = holdout_split(data, ref)
    dist = distance_to_nearest_float(data, fid)
    ids = list(model_fits)
    if refit:
        fits = refit_models(ids, train, cfg)
    else:
        fits = dict(model_fits)
    reports = {mid: predict_heldout(fits[mid], train, test, fid, dist) for mid in ids if mid in fits}
    return reports, fits


def refit_models(ids: Sequence[str], train: ProfileDataset, cfg: FitConfig) -> dict[str, FitResult]:
    param = [m for m in ids if m not in ("I2", "B2")]
    fits: dict[str, FitResult] = {}
    if param:
        fits.update(staged_fit_bivariate(train, replace(cfg, models=tuple(param))))
    if any(m in ids for m in ("I2", "B2")):
        plugin = plugin_surface(train, cfg.bandwidths, cfg.use_lattice)
        for m in ("I2", "B2"):
            if m in ids:
                fits[m] = fit_semiparametric(m, train, cfg.bandwidths, cfg, plugin)
    return fits


# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    model: str
    loglik: float
    aic: float
    mse_T: float
    mse_S: float
    jitter: float
    knots_T: tuple[float, ...]
    knots_S: tuple[float, ...]
    best: dict


def compare_models(reports: Mapping[str, PredictionReport], fits: Mapping[str, FitResult]) -> list[ComparisonRow]:
    """Per-model metrics with best-in-column flags (max log-lik, min AIC and MSEs)."""
    if not fits:
        raise InvalidArgumentError("no fits to compare")
    ids = sorted(fits, key=_model_order)
    rows = []
    for mid in ids:
        f = fits[mid]
        r = reports.get(mid)
        mse = r.mse if r is not None else (math.nan, math.nan)
        jit = max(f.jitter_used, r.jitter if r is not None else 0.0)
        rows.append(dict(model=mid, loglik=f.loglik, aic=f.aic, mse_T=mse[0], mse_S=mse[1], jitter=jit,
                         knots_T=tuple(f.knots_used[0]), knots_S=tuple(f.knots_used[1])))
    best = best_flags([[r["loglik"], r["aic"], r["mse_T"], r["mse_S"]] for r in rows])
    return [ComparisonRow(**r, best=b) for r, b in zip(rows, best)]


def best_flags(metrics) -> list[dict]:
    """Flags for a (models x [loglik, aic, mse_T, mse_S]) table; NaNs never win."""
    M = np.asarray(metrics, dtype=float).reshape(-1, 4)
    cols = ("loglik", "aic", "mse_T", "mse_S")
    flags = [dict.fromkeys(cols, False) for _ in range(M.shape[0])]
    for c, name in enumerate(cols):
        col = M[:, c]
        if np.all(np.isnan(col)):
            continue
        target = np.nanmax(col) if name == "loglik" else np.nanmin(col)
        for r in np.flatnonzero(col == target):
            flags[r][name] = True
    return flags


def _model_order(mid: str):
    order = ("I1", "I2", "I3", "B1", "B2", "B3", "B4")
    return order.index(mid) if mid in order else len(order)


def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _knots(k) -> str:
    return " ".join(_fmt(x) for x in k)


def write_report(rows: Sequence[ComparisonRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for r in rows:
            w.writerow([r.model, _fmt(r.loglik), _fmt(r.aic), _fmt(r.mse_T), _fmt(r.mse_S), _fmt(r.jitter),
                        _knots(r.knots_T), _knots(r.knots_S)])


def read_report(path) -> list[ComparisonRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_HEADER:
            raise InvalidArgumentError(f"{path}: expected header {','.join(REPORT_HEADER)}")
        raw = list(reader)
    rows = [dict(model=r["model"], loglik=float(r["loglik"]), aic=float(r["aic"]), mse_T=float(r["mse_T"]),
                 mse_S=float(r["mse_S"]), jitter=float(r["jitter"]),
                 knots_T=tuple(float(x) for x in r["knots_T"].split()),
                 knots_S=tuple(float(x) for x in r["knots_S"].split())) for r in raw]
    best = best_flags([[r["loglik"], r["aic"], r["mse_T"], r["mse_S"]] for r in rows]) if rows else []
    return [ComparisonRow(**r, best=b) for r, b in zip(rows, best)]


def format_table(rows: Sequence[ComparisonRow]) -> str:
    """Plain-text comparison table; ``*`` marks the best value in each column."""
    head = f"{'model':<6}{'loglik':>16}{'aic':>16}{'mse_T':>14}{'mse_S':>14}"
    lines = [head]
    for r in rows:
        cells = []
        for name, width, fmt in (("loglik", 16, ".4f"), ("aic", 16, ".4f"), ("mse_T", 14, ".6g"),
                                 ("mse_S", 14, ".6g")):
            s = format(getattr(r, name), fmt) + ("*" if r.best[name] else " ")
            cells.append(s.rjust(width))
        lines.append(f"{r.model:<6}" + "".join(cells))
    return "\n".join(lines)


def var_tag(v: int) -> str:
    return VAR_TAGS[v]
