"""Estimation: least-squares pre-fit, maximum likelihood and staged fitting.

All optimizers work in internal coordinates chosen so that the marginal
variance of the operator models depends on few coordinates at a time:

* scales ``a_h``, ``a_v`` and Matérn variances on the log scale;
* latitude/longitude operator coefficients as ``R * a_h * coef`` and depth
  spline weights as ``a_v * weight`` (dimensionless amplitudes);
* ``beta12`` through ``atanh``.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg.lapack import dpotrf
from scipy.optimize import minimize, minimize_scalar

from .core import EARTH_RADIUS_KM, ProfileDataset, as_coordinate_arrays
from .empirical import KernelBandwidths, MomentLattice, SmoothedMoments, moment_lattice
from .errors import (DegenerateDesignError, FitFailedError, InsufficientDataError,
                     InvalidArgumentError, NotPositiveDefiniteError)
from .kernels import PairGeometry
from .linalg import Assembler, LoglikResult, chol_loglik, nearest_pd_fix
from .models import VAR_TAGS, CovarianceModel, ParamVector, PluginSurface, get_model
from .splines import STRATIFICATION_KNOTS, SplineSpec, project_weights, refine_knots

log = logging.getLogger(__name__)

PENALTY = 1e25
DEPTH_STRATA = (0.0, 100.0, 1000.0, 2000.0)


@dataclass(frozen=True)
class FitConfig:
    """Optimizer budget and estimation settings."""

    max_evals: int = 2000
    restarts: int = 3
    restart_tol: float = 1e-3
    wls_max_evals: int = 2000
    n_anchors: int = 40
    bandwidths: KernelBandwidths = KernelBandwidths()
    knots: tuple[float, ...] = STRATIFICATION_KNOTS
    degree: int = 3
    max_refinements: int = 3
    refine_factor: float = 2.0
    use_lattice: bool = False
    models: tuple[str, ...] = ("I1", "B1", "I3", "B3", "B4")
    tile: int | None = None
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.max_evals < 1 or self.restarts < 0 or self.n_anchors < 2:
            raise InvalidArgumentError(f"invalid optimizer budget in {self}")
        for m in self.models:
            get_model(m)

    def splines(self) -> tuple[SplineSpec, SplineSpec]:
        sp = SplineSpec(tuple(self.knots), self.degree)
        return sp, sp

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["knots"] = list(self.knots)
        d["models"] = list(self.models)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidArgumentError(f"unknown fit settings {sorted(unknown)}")
        if "bandwidths" in d and isinstance(d["bandwidths"], dict):
            d["bandwidths"] = KernelBandwidths(**d["bandwidths"])
        for k in ("knots", "models"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class FitResult:
    model: CovarianceModel
    theta_hat: ParamVector
    loglik: float
    aic: float
    wls_objective: float = float("nan")
    trace: list[float] = field(default_factory=list)
    knots_used: tuple[tuple[float, ...], tuple[float, ...]] = ((), ())
    jitter_used: float = 0.0
    n_evals: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return self.model.param_count

    @property
    def rho12(self) -> float:
        return self.model.rho12(self.theta_hat)


def aic(loglik: float, k: int) -> float:
    return 2.0 * k - 2.0 * loglik


# --------------------------------------------------------------------------
# internal coordinates

class Coordinates:
    """Bijection between a model's parameters and the optimizer's coordinates."""

    def __init__(self, model: CovarianceModel):
        self.model = model
        self.specs = model.schema()
        self.names = tuple(s.name for s in self.specs)
        self._ih = self.names.index("a_h")
        self._iv = self.names.index("a_v")

    def _kind(self, name: str) -> str:
        if name in ("a_T", "b_T", "a_S", "b_S"):
            return "horizontal"
        if name.startswith("c_"):
            return "vertical"
        return "direct"

    def encode(self, theta: ParamVector) -> np.ndarray:
        d = theta.as_dict()
        u = []
        for s in self.specs:
            kind = self._kind(s.name)
            if kind == "horizontal":
                u.append(EARTH_RADIUS_KM * d["a_h"] * d[s.name])
            elif kind == "vertical":
                u.append(d["a_v"] * d[s.name])
            else:
                u.append(s.encode(d[s.name]))
        return np.array(u)

    def decode(self, u) -> ParamVector:
        a_h = math.exp(u[self._ih])
        a_v = math.exp(u[self._iv])
        vals = []
        for s, x in zip(self.specs, u):
            kind = self._kind(s.name)
            if kind == "horizontal":
                vals.append(x / (EARTH_RADIUS_KM * a_h))
            elif kind == "vertical":
                vals.append(x / a_v)
            else:
                vals.append(s.decode(x))
        return ParamVector(self.specs, tuple(vals))

    def bounds(self) -> list[tuple[float | None, float | None]]:
        out = []
        for s in self.specs:
            out.append(s.encoded_bounds() if self._kind(s.name) == "direct" else (None, None))
        return out

    def steps(self, u: np.ndarray) -> np.ndarray:
        """Initial simplex edge lengths around ``u``."""
        amp = [abs(x) for x, n in zip(u, self.names) if self._kind(n) != "direct"]
        ref = float(np.sqrt(np.mean(np.square(amp)))) if amp and np.any(amp) else 1.0
        st = []
        for x, n in zip(u, self.names):
            if self._kind(n) == "direct":
                st.append(0.3)
            else:
                st.append(0.25 * max(abs(x), 0.2 * ref))
        return np.array(st)


# --------------------------------------------------------------------------
# likelihood

def _check_fit_data(model: CovarianceModel, data: ProfileDataset):
    if len(data.float_ids) < 2:
        raise InsufficientDataError("fitting needs at least two floats: one horizontal location cannot "
                                    "identify the horizontal scale")
    if 2 * len(data) <= model.param_count:
        raise InsufficientDataError(f"{2 * len(data)} values cannot identify {model.param_count} parameters")


class LikelihoodEvaluator:
    """Gaussian log-likelihood of one dataset under one model, geometry cached."""

    def __init__(self, model: CovarianceModel, data: ProfileDataset, tile: int | None = None, workers: int = 1):
        self.model = model
        self.data = data
        self.z = data.z()
        self.assembler = Assembler(model, (data.lat, data.lon, data.pres), tile=tile, workers=workers)

    def covariance(self, theta: ParamVector) -> np.ndarray:
        S = self.assembler.matrix(theta)
        if self.model.spec.family == "plugin":
            try:
                _plain_cholesky(S)
            except NotPositiveDefiniteError:
                S = nearest_pd_fix(S)
        return S

    def __call__(self, theta: ParamVector) -> LoglikResult:
        return chol_loglik(self.covariance(theta), self.z)


def _plain_cholesky(S):
    _, info = dpotrf(S, lower=1, clean=0, overwrite_a=0)
    if info != 0:
        raise NotPositiveDefiniteError("indefinite plug-in covariance")


def loglik(model: CovarianceModel, theta: ParamVector, data: ProfileDataset) -> float:
    return LikelihoodEvaluator(model, data)(theta).loglik


# --------------------------------------------------------------------------
# optimizer driver

@dataclass
class _Tracker:
    best_f: float = math.inf
    best_u: np.ndarray | None = None
    n_evals: int = 0
    trace: list = field(default_factory=list)


def _minimize(fun, u0: np.ndarray, coords: Coordinates, max_evals: int, restarts: int,
              restart_tol: float, rng: np.random.Generator, tracker: _Tracker) -> None:
    """Bounded Nelder-Mead with restarts around the best point."""
    bounds = coords.bounds()
    lo = np.array([-np.inf if b[0] is None else b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])

    def wrapped(u):
        tracker.n_evals += 1
        f = fun(u)
        if f < tracker.best_f:
            tracker.best_f, tracker.best_u = f, np.array(u, dtype=float)
        return f

    def callback(intermediate_result=None):
        tracker.trace.append(-tracker.best_f)

    start = np.clip(u0, lo, hi)
    wrapped(start)
    tracker.trace.append(-tracker.best_f)
    for r in range(restarts + 1):
        x0 = tracker.best_u if tracker.best_u is not None else start
        before = tracker.best_f
        steps = coords.steps(x0)
        if r > 0:
            steps = steps * rng.uniform(0.5, 1.5, steps.size) * rng.choice([-1.0, 1.0], steps.size)
        simplex = np.vstack([x0] + [x0 + np.eye(x0.size)[k] * steps[k] for k in range(x0.size)])
        simplex = np.clip(simplex, lo, hi)
        # a vertex pushed onto a bound may coincide with x0; step inward instead
        for k in range(x0.size):
            if np.allclose(simplex[k + 1], x0):
                simplex[k + 1, k] = x0[k] - steps[k]
        simplex = np.clip(simplex, lo, hi)
        minimize(wrapped, x0, method="Nelder-Mead", bounds=bounds, callback=callback,
                 options=dict(maxfev=max_evals, initial_simplex=simplex, xatol=1e-6, fatol=1e-7,
                              adaptive=x0.size > 4))
        if r > 0 and before - tracker.best_f < restart_tol:
            break


def _objective_nll(evaluator: LikelihoodEvaluator, coords: Coordinates):
    def f(u):
        try:
            theta = coords.decode(u)
        except (OverflowError, ValueError):
            return PENALTY
        if not theta.in_bounds():
            return PENALTY
        try:
            return -evaluator(theta).loglik
        except (NotPositiveDefiniteError, InvalidArgumentError, FloatingPointError):
            return PENALTY
    return f


def mle(model: CovarianceModel, theta0: ParamVector, data: ProfileDataset, cfg: FitConfig = FitConfig(),
        evaluator: LikelihoodEvaluator | None = None, rng: np.random.Generator | None = None) -> FitResult:
    """Maximize the Gaussian log-likelihood from ``theta0``."""
    _check_fit_data(model, data)
    if not theta0.in_bounds():
        raise InvalidArgumentError(f"starting point outside bounds: {theta0.as_dict()}")
    ev = evaluator or LikelihoodEvaluator(model, data, cfg.tile, cfg.workers)
    rng = rng if rng is not None else _rng(cfg.seed, model.id, "mle")
    coords = Coordinates(model)
    tr = _Tracker()
    with np.errstate(all="ignore"):
        _minimize(_objective_nll(ev, coords), coords.encode(theta0), coords, cfg.max_evals,
                  cfg.restarts, cfg.restart_tol, rng, tr)
    if tr.best_u is None or tr.best_f >= PENALTY:
        raise FitFailedError(f"{model.id}: no admissible parameter value found", best=None)
    theta = model.canonicalize(coords.decode(tr.best_u))
    res = ev(theta)
    ll = res.loglik
    if not math.isfinite(ll):
        raise FitFailedError(f"{model.id}: non-finite log-likelihood at the optimum", best=theta)
    return FitResult(model, theta, ll, aic(ll, model.param_count), trace=tr.trace,
                     knots_used=_knots_used(model), jitter_used=res.jitter,
                     n_evals=tr.n_evals, metadata={"optimizer": "nelder-mead", "restarts": cfg.restarts,
                                                   "max_evals": cfg.max_evals})


def _knots_used(model: CovarianceModel) -> tuple[tuple[float, ...], tuple[float, ...]]:
    if model.spec.family != "diffop":
        return ((), ())
    return tuple(tuple(s.knots) for s in model.splines)


def _rng(seed: int, *labels: str) -> np.random.Generator:
    key = [int.from_bytes(s.encode(), "little") % (2**32) for s in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


# --------------------------------------------------------------------------
# least squares against smoothed empirical covariances

def select_anchors(data: ProfileDataset, k: int = 40, rng: np.random.Generator | None = None) -> np.ndarray:
    """Indices of at most ``k`` observations, stratified by depth zone.

    Each non-empty zone (0-100, 100-1000, 1000-2000 dbar) gets a share
    proportional to its size and at least one anchor.
    """
    rng = rng if rng is not None else np.random.Generator(np.random.Philox(0))
    n = len(data)
    if n <= k:
        return np.arange(n)
    zone = np.clip(np.searchsorted(DEPTH_STRATA[1:-1], data.pres, side="right"), 0, 2)
    members = [np.flatnonzero(zone == z) for z in range(3)]
    sizes = np.array([m.size for m in members], dtype=float)
    share = np.where(sizes > 0, np.maximum(1, np.floor(k * sizes / n)), 0).astype(int)
    while share.sum() < k:
        gap = np.where(share < sizes, k * sizes / n - share, -np.inf)
        share[int(np.argmax(gap))] += 1
    while share.sum() > k:
        share[int(np.argmax(share))] -= 1
    picks = [rng.choice(m, size=min(s, m.size), replace=False) for m, s in zip(members, share) if s > 0]
    return np.sort(np.concatenate(picks))


class WlsProblem:
    """Least-squares distance between model and smoothed empirical cross-covariances."""

    def __init__(self, model: CovarianceModel, anchors, target: dict):
        self.model = model
        self.anchors = anchors
        self.geom = PairGeometry(*anchors, *anchors)
        self.cache = model.prepare(self.geom)
        self.target = target

    @classmethod
    def from_moments(cls, model: CovarianceModel, anchors, moments: SmoothedMoments) -> "WlsProblem":
        target = {(i, j): moments.cross_cov(i, j, anchors, anchors) for i in (0, 1) for j in (0, 1)}
        return cls(model, anchors, target)

    def __call__(self, theta: ParamVector) -> float:
        kp = None if self.model.spec.family == "plugin" else self.model.kernel_params(theta)
        q = 0.0
        for (i, j), C in self.target.items():
            M = self.model.cross_matrix(i, j, self.geom, theta, self.cache, kp)
            q += float(np.sum((C - M) ** 2))
        return q


def wls_objective(model: CovarianceModel, theta: ParamVector, anchor_pairs, moments) -> float:
    """Sum of squared differences over all anchor pairs and variable pairs.

    ``anchor_pairs`` is a point set (all ordered pairs are used) and
    ``moments`` either a :class:`SmoothedMoments` or a dict of target blocks
    keyed by ``(i, j)``.
    """
    pts = as_coordinate_arrays(anchor_pairs)
    prob = (WlsProblem(model, pts, moments) if isinstance(moments, dict)
            else WlsProblem.from_moments(model, pts, moments))
    return prob(theta)


def wls_fit(model: CovarianceModel, theta0: ParamVector, data: ProfileDataset, cfg: FitConfig = FitConfig(),
            rng: np.random.Generator | None = None) -> tuple[ParamVector, float, dict]:
    rng = rng if rng is not None else _rng(cfg.seed, model.id, "wls")
    idx = select_anchors(data, cfg.n_anchors, rng)
    anchors = (data.lat[idx], data.lon[idx], data.pres[idx])
    prob = WlsProblem.from_moments(model, anchors, SmoothedMoments(data, cfg.bandwidths))
    coords = Coordinates(model)

    def f(u):
        try:
            theta = coords.decode(u)
        except (OverflowError, ValueError):
            return PENALTY
        if not theta.in_bounds():
            return PENALTY
        q = prob(theta)
        return q if math.isfinite(q) else PENALTY

    tr = _Tracker()
    with np.errstate(all="ignore"):
        _minimize(f, coords.encode(theta0), coords, cfg.wls_max_evals, 0, cfg.restart_tol, rng, tr)
    meta = {"anchors": int(idx.size), "anchor_strata": list(DEPTH_STRATA),
            "bandwidths": dataclasses.asdict(cfg.bandwidths)}
    return coords.decode(tr.best_u), tr.best_f, meta


def two_step_fit(model: CovarianceModel | str, data: ProfileDataset, cfg: FitConfig = FitConfig(),
                 theta0: ParamVector | None = None) -> FitResult:
    """Least-squares pre-fit followed by maximum likelihood.

    The likelihood search starts from the least-squares solution, or from
    ``theta0`` if that already has the higher likelihood.
    """
    if isinstance(model, str):
        model = CovarianceModel.of(model, splines=cfg.splines())
    if model.spec.family == "plugin":
        raise InvalidArgumentError(f"{model.id} has no parametric covariance; use fit_semiparametric")
    _check_fit_data(model, data)
    theta0 = theta0 if theta0 is not None else model.default_theta(data)
    ev = LikelihoodEvaluator(model, data, cfg.tile, cfg.workers)
    warnings = []
    q = float("nan")
    start = theta0
    wls_meta = {}
    try:
        theta_w, q, wls_meta = wls_fit(model, theta0, data, cfg)
        if _safe_ll(ev, theta_w) >= _safe_ll(ev, theta0):
            start = theta_w
        else:
            warnings.append("least-squares start has lower likelihood than the initial value")
    except (InsufficientDataError, NotPositiveDefiniteError, InvalidArgumentError, FloatingPointError) as exc:
        warnings.append(f"least-squares step failed ({exc}); starting from defaults")
        log.warning("%s: least-squares step failed: %s", model.id, exc)
    res = mle(model, start, data, cfg, evaluator=ev)
    res.wls_objective = q
    res.metadata.update(wls_meta)
    res.metadata["warnings"] = warnings
    return res


def _safe_ll(ev: LikelihoodEvaluator, theta: ParamVector) -> float:
    try:
        return ev(theta).loglik
    except (NotPositiveDefiniteError, InvalidArgumentError):
        return -math.inf


# --------------------------------------------------------------------------
# staged fitting of the operator models

class FitCollection(dict):
    """``model id -> FitResult`` plus the errors of stages that failed."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.failures: dict[str, str] = {}


def _flip_var(model: CovarianceModel, theta: ParamVector, tag: str) -> ParamVector:
    d = theta.as_dict()
    for k in d:
        if k in (f"a_{tag}", f"b_{tag}") or k.startswith(f"c_{tag}_"):
            d[k] = -d[k]
    return ParamVector(theta.specs, tuple(d[n] for n in theta.names))


def _transfer(theta: ParamVector, target: CovarianceModel, beta: float | None = None) -> ParamVector:
    d = theta.as_dict()
    if "beta12" in {s.name for s in target.schema()}:
        d["beta12"] = 0.0 if beta is None else beta
    return target.theta(**{s.name: d[s.name] for s in target.schema()})


def fit_b3_from(i3: FitResult, data: ProfileDataset, cfg: FitConfig) -> FitResult:
    model = CovarianceModel.of("B3", splines=i3.model.splines, nu_diffop=i3.model.nu_diffop)
    ev = LikelihoodEvaluator(model, data, cfg.tile, cfg.workers)
    # the shared field fixes the relative sign of the two operators: try both
    cands = [_transfer(i3.theta_hat, model), _transfer(_flip_var(model, i3.theta_hat, "S"), model)]
    start = max(cands, key=lambda t: _safe_ll(ev, t))
    res = mle(model, start, data, cfg, evaluator=ev)
    res.metadata["start"] = "I3 estimates, shared latent field"
    return res


def fit_b4_from(i3: FitResult, data: ProfileDataset, cfg: FitConfig) -> FitResult:
    """B4 started from the I3 estimates with ``beta12 = 0``.

    A one-dimensional search over ``beta12`` with the operators held at the
    I3 values precedes the full search; both only ever improve on the start.
    """
    model = CovarianceModel.of("B4", splines=i3.model.splines, nu_diffop=i3.model.nu_diffop)
    ev = LikelihoodEvaluator(model, data, cfg.tile, cfg.workers)
    start = _transfer(i3.theta_hat, model, 0.0)
    ll0 = _safe_ll(ev, start)
    bound = math.atanh(model.schema()[-1].upper)

    def nll(u):
        t = start.with_values(beta12=math.tanh(u))
        return -_safe_ll(ev, t)

    line = minimize_scalar(nll, bounds=(-bound, bound), method="bounded",
                           options=dict(xatol=1e-4, maxiter=60))
    if -line.fun > ll0:
        start = start.with_values(beta12=math.tanh(line.x))
    res = mle(model, start, data, cfg, evaluator=ev)
    res.n_evals += int(line.nfev)
    res.metadata["start"] = "I3 estimates, beta12 line search from 0"
    return res


def staged_fit_bivariate(data: ProfileDataset, cfg: FitConfig = FitConfig()) -> FitCollection:
    """Fit I3 (with knot refinement), then B3 and B4 from it, plus I1/B1 baselines."""
    out = FitCollection()
    wanted = set(cfg.models)
    for mid in ("I1", "B1"):
        if mid in wanted:
            try:
                out[mid] = two_step_fit(CovarianceModel.of(mid), data, cfg)
            except Exception as exc:  # noqa: BLE001 - a failed stage must not stop the others
                out.failures[mid] = f"{type(exc).__name__}: {exc}"
                log.error("%s failed: %s", mid, exc)
    if wanted & {"I3", "B3", "B4"}:
        try:
            _, i3 = knot_refinement_loop(data, cfg)
        except Exception as exc:  # noqa: BLE001
            out.failures["I3"] = f"{type(exc).__name__}: {exc}"
            log.error("I3 failed: %s", exc)
            return out
        if "I3" in wanted:
            out["I3"] = i3
        for mid, fn in (("B3", fit_b3_from), ("B4", fit_b4_from)):
            if mid in wanted:
                try:
                    out[mid] = fn(i3, data, cfg)
                except Exception as exc:  # noqa: BLE001
                    out.failures[mid] = f"{type(exc).__name__}: {exc}"
                    log.error("%s failed: %s", mid, exc)
    for mid in ("I2", "B2"):
        if mid in wanted:
            try:
                out[mid] = fit_semiparametric(mid, data, cfg.bandwidths, cfg)
            except Exception as exc:  # noqa: BLE001
                out.failures[mid] = f"{type(exc).__name__}: {exc}"
    return out


def knot_refinement_loop(data: ProfileDataset, cfg: FitConfig = FitConfig(),
                         threshold_factor: float | None = None) -> tuple[tuple[SplineSpec, SplineSpec], FitResult]:
    """Add midpoint knots while the I3 likelihood gain beats ``factor * added parameters``."""
    factor = cfg.refine_factor if threshold_factor is None else threshold_factor
    splines = cfg.splines()
    model = CovarianceModel.of("I3", splines=splines)
    best = two_step_fit(model, data, cfg)
    history = [(tuple(splines[0].knots), best.loglik)]
    for _ in range(cfg.max_refinements):
        if not math.isfinite(factor):
            break
        new = tuple(refine_knots(s) for s in splines)
        try:
            for s in new:
                SplineSpec(s.knots, s.degree)
        except InvalidArgumentError:
            break
        new_model = CovarianceModel.of("I3", splines=new)
        warm = _warm_start(best.theta_hat, model, new_model)
        cand = two_step_fit(new_model, data, cfg, theta0=warm)
        dk = new_model.param_count - model.param_count
        history.append((tuple(new[0].knots), cand.loglik))
        if cand.loglik - best.loglik < factor * dk:
            break
        splines, model, best = new, new_model, cand
    best.metadata["knot_history"] = [{"knots": list(k), "loglik": ll} for k, ll in history]
    return splines, best


def _warm_start(theta: ParamVector, old: CovarianceModel, new: CovarianceModel) -> ParamVector:
    d = theta.as_dict()
    v = {k: d[k] for k in ("a_h", "a_v", "a_T", "b_T", "a_S", "b_S")}
    for tag, so, sn in zip(VAR_TAGS, old.splines, new.splines):
        w = np.array([d[f"c_{tag}_{m}"] for m in range(so.M)])
        for m, x in enumerate(project_weights(so, w, sn)):
            v[f"c_{tag}_{m}"] = float(x)
    if "beta12" in d:
        v["beta12"] = d["beta12"]
    return new.theta(**v).clipped()


# --------------------------------------------------------------------------
# semi-parametric models

def plugin_surface(data: ProfileDataset, bw: KernelBandwidths, use_lattice: bool = False,
                   lattice: MomentLattice | None = None) -> PluginSurface:
    moments = SmoothedMoments(data, bw)
    if use_lattice and lattice is None:
        lattice = moment_lattice(data, bw)
    return PluginSurface(moments, lattice if use_lattice or lattice is not None else None)


def fit_semiparametric(model_id: str, data: ProfileDataset, bw: KernelBandwidths = KernelBandwidths(),
                       cfg: FitConfig = FitConfig(), plugin: PluginSurface | None = None) -> FitResult:
    """Plug smoothed variances (and correlation seeds for B2) in; fit the two scales."""
    if model_id not in ("I2", "B2"):
        raise InvalidArgumentError(f"{model_id} is not semi-parametric")
    plugin = plugin or plugin_surface(data, bw, cfg.use_lattice)
    model = CovarianceModel.of(model_id, plugin=plugin)
    res = mle(model, model.default_theta(data), data, cfg)
    res.metadata["bandwidths"] = dataclasses.asdict(plugin.bandwidths)
    res.metadata["plugin"] = "lattice" if plugin.lattice is not None else "direct"
    return res


# --------------------------------------------------------------------------
# local mean removal

TREND_TERMS = ("1", "dL", "dl", "dL2", "dl2", "dp", "dp2")
N_HARMONICS = 6


def _trend_design(data: ProfileDataset, ref) -> tuple[np.ndarray, list[str]]:
    dL, dl, dp = data.lat - ref.lat, data.lon - ref.lon, data.pres - ref.pres
    dl = (dl + 180.0) % 360.0 - 180.0
    cols = [np.ones(len(data)), dL, dl, dL**2, dl**2, dp, dp**2]
    names = list(TREND_TERMS)
    if data.has_time:
        t = np.array([o.time for o in data.observations], dtype=float)
        for k in range(1, N_HARMONICS + 1):
            cols.append(np.sin(2 * np.pi * k * t / 365.25))
            names.append(f"sin{k}")
        for k in range(1, N_HARMONICS + 1):
            cols.append(np.cos(2 * np.pi * k * t / 365.25))
            names.append(f"cos{k}")
    return np.column_stack(cols), names


def fit_local_trend(raw: ProfileDataset, ref, cfg=None) -> tuple[ProfileDataset, dict[str, np.ndarray]]:
    """Remove a local quadratic trend (plus annual harmonics when times exist) by OLS.

    Returns the residual dataset and, per variable tag, the coefficient
    vector ordered like ``coef["terms"]``.
    """
    X, names = _trend_design(raw, ref)
    if X.shape[0] < X.shape[1]:
        raise DegenerateDesignError(f"{X.shape[0]} observations for {X.shape[1]} trend terms")
    # column scaling keeps the rank test meaningful for mixed units
    scale = np.max(np.abs(X), axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    rank = np.linalg.matrix_rank(Xs)
    if rank < X.shape[1]:
        raise DegenerateDesignError(f"trend design has rank {rank} < {X.shape[1]}")
    coef = {"terms": np.array(names)}
    res = []
    for tag, y in zip(VAR_TAGS, (raw.temp, raw.psal)):
        b, *_ = np.linalg.lstsq(Xs, y, rcond=None)
        coef[tag] = b / scale
        res.append(y - Xs @ b)
    return raw.with_values(res[0], res[1]), coef
