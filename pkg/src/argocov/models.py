"""The seven bivariate covariance models and their parameter vectors.

=====  ==============================================================
I1     independent Matérn, constant variances
I2     independent Matérn, kernel-smoothed variance surfaces
I3     independent differential-operator model
B1     bivariate parsimonious Matérn
B2     bivariate Matérn, smoothed variances and correlation seeds
B3     differential operators applied to one shared latent field
B4     differential operators applied to a correlated bivariate field
=====  ==============================================================

Operator models fix both latent variances to 1 (they are not identifiable
next to the operator coefficients) and the ``d`` coefficients to 0. The
parsimonious Matérn models use smoothness 1 and the operator models a latent
smoothness of 2, so every fitted process has effective smoothness 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import EARTH_RADIUS_KM, ProfileDataset
from .errors import InvalidArgumentError
from .kernels import (DiffOpParams, MaternParams, PairGeometry, _m_with_limit, colocated_rho,
                      diffop_cross_matrix, matern_cross_matrix, matern_norm, ZERO_LAG_H)
from .splines import SplineSpec, basis_matrix

VAR_TAGS = ("T", "S")


@dataclass(frozen=True)
class ModelSpec:
    id: str
    bivariate: bool
    nonstationary: bool
    semiparametric: bool
    family: str  # "matern", "plugin" or "diffop"
    description: str = ""


MODELS: dict[str, ModelSpec] = {m.id: m for m in (
    ModelSpec("I1", False, False, False, "matern", "parametric, stationary, independent"),
    ModelSpec("I2", False, True, True, "plugin", "semi-parametric, nonstationary, independent"),
    ModelSpec("I3", False, True, False, "diffop", "parametric, nonstationary, independent"),
    ModelSpec("B1", True, False, False, "matern", "parametric, stationary, bivariate"),
    ModelSpec("B2", True, True, True, "plugin", "semi-parametric, nonstationary, bivariate"),
    ModelSpec("B3", True, True, False, "diffop", "parametric, nonstationary, bivariate"),
    ModelSpec("B4", True, True, False, "diffop", "parametric, nonstationary, bivariate"),
)}


def get_model(model_id: str) -> ModelSpec:
    try:
        return MODELS[model_id]
    except KeyError:
        raise InvalidArgumentError(f"unknown model {model_id!r}; choose from {sorted(MODELS)}") from None


# --------------------------------------------------------------------------
# parameters

@dataclass(frozen=True)
class ParamSpec:
    name: str
    lower: float
    upper: float
    transform: str  # "log", "atanh" or "linear"

    def encode(self, x: float) -> float:
        if self.transform == "log":
            return math.log(x)
        if self.transform == "atanh":
            return math.atanh(x)
        return float(x)

    def decode(self, u: float) -> float:
        if self.transform == "log":
            return math.exp(u)
        if self.transform == "atanh":
            return math.tanh(u)
        return float(u)

    def encoded_bounds(self) -> tuple[float, float]:
        return self.encode(self.lower), self.encode(self.upper)


@dataclass(frozen=True)
class ParamVector:
    """Named parameter values with box bounds and optimizer transforms."""

    specs: tuple[ParamSpec, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.specs) != len(self.values):
            raise InvalidArgumentError("parameter names and values differ in length")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.specs)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def __getitem__(self, name: str) -> float:
        return self.as_dict()[name]

    def get(self, name: str, default=None):
        return self.as_dict().get(name, default)

    def with_values(self, **kw) -> "ParamVector":
        d = self.as_dict()
        unknown = set(kw) - set(d)
        if unknown:
            raise InvalidArgumentError(f"unknown parameters {sorted(unknown)}")
        d.update(kw)
        return ParamVector(self.specs, tuple(d[n] for n in self.names))

    def in_bounds(self) -> bool:
        return all(s.lower <= v <= s.upper for s, v in zip(self.specs, self.values))

    def clipped(self) -> "ParamVector":
        return ParamVector(self.specs, tuple(min(max(v, s.lower), s.upper)
                                             for s, v in zip(self.specs, self.values)))

    def encode(self) -> np.ndarray:
        return np.array([s.encode(v) for s, v in zip(self.specs, self.values)])

    @classmethod
    def decode(cls, specs, u) -> "ParamVector":
        return cls(tuple(specs), tuple(s.decode(x) for s, x in zip(specs, u)))


SCALE_BOUNDS = (1e-4, 1.0)
VARIANCE_BOUNDS = (1e-10, 1e6)
BETA_BOUND = 0.999
COEF_BOUND = 1e8


def _scale_specs():
    return (ParamSpec("a_h", *SCALE_BOUNDS, "log"), ParamSpec("a_v", *SCALE_BOUNDS, "log"))


def _beta_spec():
    return ParamSpec("beta12", -BETA_BOUND, BETA_BOUND, "atanh")


def _coef(name):
    return ParamSpec(name, -COEF_BOUND, COEF_BOUND, "linear")


# --------------------------------------------------------------------------
# plug-in surfaces for the semi-parametric models

class PluginSurface:
    """Smoothed variance and correlation-seed surfaces from a training set.

    Variances come from ``moments`` (a :class:`~argocov.empirical.SmoothedMoments`)
    unless a :class:`~argocov.empirical.MomentLattice` is given, in which case
    they are interpolated trilinearly. Correlation seeds between two different
    locations are always evaluated directly.
    """

    def __init__(self, moments, lattice=None):
        self.moments = moments
        self.lattice = lattice

    @property
    def bandwidths(self):
        return self.moments.bw

    def sigma(self, var: int, lat, lon, pres) -> np.ndarray:
        if self.lattice is not None:
            s2 = self.lattice.sigma2_at(var, lat, lon, pres)
        else:
            s2 = self.moments.sigma2(var, (lat, lon, pres))
        return np.sqrt(np.maximum(s2, 0.0))

    def beta(self, lat1, lon1, pres1, lat2, lon2, pres2) -> np.ndarray:
        return self.moments.beta(0, 1, (lat1, lon1, pres1), (lat2, lon2, pres2))


# --------------------------------------------------------------------------
# models with context

@dataclass(frozen=True)
class CovarianceModel:
    """A model id together with everything fixed during estimation."""

    spec: ModelSpec
    splines: tuple[SplineSpec, SplineSpec] = (SplineSpec(), SplineSpec())
    nu_matern: float = 1.0
    nu_diffop: float = 2.0
    dim_d: int = 3
    nugget: tuple[float, float] = (0.0, 0.0)
    plugin: PluginSurface | None = field(default=None, compare=False)

    @classmethod
    def of(cls, model_id: str, **kw) -> "CovarianceModel":
        return cls(get_model(model_id), **kw)

    @property
    def id(self) -> str:
        return self.spec.id

    def schema(self) -> tuple[ParamSpec, ...]:
        mid, fam = self.spec.id, self.spec.family
        if fam == "matern":
            s = (ParamSpec("sigma2_T", *VARIANCE_BOUNDS, "log"), ParamSpec("sigma2_S", *VARIANCE_BOUNDS, "log"))
            s += _scale_specs()
            return s + ((_beta_spec(),) if mid == "B1" else ())
        if fam == "plugin":
            return _scale_specs()
        s = _scale_specs() + (_coef("a_T"), _coef("b_T"), _coef("a_S"), _coef("b_S"))
        for tag, sp in zip(VAR_TAGS, self.splines):
            s += tuple(_coef(f"c_{tag}_{m}") for m in range(sp.M))
        return s + ((_beta_spec(),) if mid == "B4" else ())

    @property
    def param_count(self) -> int:
        return len(self.schema())

    def theta(self, **values) -> ParamVector:
        specs = self.schema()
        missing = [s.name for s in specs if s.name not in values]
        if missing:
            raise InvalidArgumentError(f"missing parameters {missing}")
        return ParamVector(specs, tuple(values[s.name] for s in specs))

    def fixed_beta(self) -> float | None:
        return {"I1": 0.0, "I2": 0.0, "I3": 0.0, "B3": 1.0}.get(self.spec.id)

    # ----------------------------------------------------------------------
    def kernel_params(self, theta: ParamVector):
        """Translate a parameter vector into kernel parameters (not for plug-in models)."""
        d = theta.as_dict()
        beta = self.fixed_beta()
        beta = d["beta12"] if beta is None else beta
        if self.spec.family == "matern":
            return MaternParams((d["sigma2_T"], d["sigma2_S"]), (self.nu_matern,) * 2, beta,
                                d["a_h"], d["a_v"], self.dim_d)
        if self.spec.family == "diffop":
            base = MaternParams((1.0, 1.0), (self.nu_diffop,) * 2, beta, d["a_h"], d["a_v"], self.dim_d)
            w = tuple(np.array([d[f"c_{tag}_{m}"] for m in range(sp.M)])
                      for tag, sp in zip(VAR_TAGS, self.splines))
            return DiffOpParams(base, (d["a_T"], d["a_S"]), (d["b_T"], d["b_S"]), self.splines, w, (0.0, 0.0))
        raise InvalidArgumentError(f"{self.id} has no closed-form kernel parameters")

    def rho12(self, theta: ParamVector) -> float:
        """Colocated correlation of the (latent) Matérn field."""
        if self.spec.family == "plugin":
            return float("nan")
        beta = self.fixed_beta()
        beta = theta["beta12"] if beta is None else beta
        nu = self.nu_matern if self.spec.family == "matern" else self.nu_diffop
        return colocated_rho(beta, nu, nu, self.dim_d)

    def prepare(self, geom: PairGeometry) -> dict:
        """Parameter-free quantities reused across evaluations on ``geom``."""
        if self.spec.family == "diffop":
            return {"B1": tuple(basis_matrix(sp, geom.pres1) for sp in self.splines),
                    "B2": tuple(basis_matrix(sp, geom.pres2) for sp in self.splines)}
        if self.spec.family == "plugin":
            if self.plugin is None:
                raise InvalidArgumentError(f"{self.id} needs plug-in surfaces from training data")
            pts1 = (geom.lat1, geom.lon1, geom.pres1)
            pts2 = (geom.lat2, geom.lon2, geom.pres2)
            cache = {"sig1": tuple(self.plugin.sigma(v, *pts1) for v in (0, 1)),
                     "sig2": tuple(self.plugin.sigma(v, *pts2) for v in (0, 1))}
            if self.spec.id == "B2":
                cache["beta12"] = self.plugin.beta(*pts1, *pts2)
                cache["beta21"] = self.plugin.beta(*pts2, *pts1).T
            return cache
        return {}

    def cross_matrix(self, i: int, j: int, geom: PairGeometry, theta: ParamVector,
                     cache: dict | None = None, kparams=None, scratch: dict | None = None) -> np.ndarray:
        """Matrix of ``C_ij(s_a, s_b)`` over the two point sets of ``geom``."""
        fam = self.spec.family
        if fam == "matern":
            kp = kparams or self.kernel_params(theta)
            return matern_cross_matrix(i, j, geom, kp)
        if cache is None:
            cache = self.prepare(geom)
        if fam == "diffop":
            kp = kparams or self.kernel_params(theta)
            c1 = cache["B1"][i] @ kp.c_weights[i]
            c2 = cache["B2"][j] @ kp.c_weights[j]
            return diffop_cross_matrix(i, j, geom, kp, c1, c2, scratch)
        # plug-in
        if i != j and self.spec.id == "I2":
            return np.zeros(geom.shape)
        a_h, a_v = theta["a_h"], theta["a_v"]
        nu = self.nu_matern
        h = geom.h(a_h, a_v)
        zero = h < ZERO_LAG_H
        corr = _m_with_limit(nu, np.sqrt(np.where(zero, 0.0, h)), zero) / matern_norm(nu)
        out = cache["sig1"][i][:, None] * cache["sig2"][j][None, :] * corr
        if i != j:
            beta = cache["beta12"] if i == 0 else cache["beta21"]
            out = out * colocated_rho(1.0, nu, nu, self.dim_d) * beta
        return out

    # ----------------------------------------------------------------------
    def default_theta(self, data: ProfileDataset | None = None) -> ParamVector:
        """Data-scaled starting values.

        Operator amplitudes are split evenly between the three derivative
        directions so the implied marginal variance matches the sample variance.
        """
        var = (1.0, 1.0) if data is None or len(data) < 2 else (
            float(np.mean(data.temp**2)) or 1.0, float(np.mean(data.psal**2)) or 1.0)
        a_h, a_v = 1.0 / 300.0, 1.0 / 100.0
        fam = self.spec.family
        if fam == "matern":
            v = dict(sigma2_T=var[0], sigma2_S=var[1], a_h=a_h, a_v=a_v)
            if self.spec.id == "B1":
                v["beta12"] = 0.0
            return self.theta(**v)
        if fam == "plugin":
            return self.theta(a_h=a_h, a_v=a_v)
        lat0 = float(np.mean(data.lat)) if data is not None and len(data) else 0.0
        v = dict(a_h=a_h, a_v=a_v)
        # marginal variance at zero lag is
        # alpha M_{nu-1}(0) [(R a_h a)^2 + (R a_h cosL b)^2 + (a_v c)^2]
        k = matern_norm(self.nu_diffop - 1.0) / matern_norm(self.nu_diffop)
        for tag, vv, sp in zip(VAR_TAGS, var, self.splines):
            amp = math.sqrt(vv / (3.0 * k))
            v[f"a_{tag}"] = amp / (EARTH_RADIUS_KM * a_h)
            v[f"b_{tag}"] = amp / (EARTH_RADIUS_KM * a_h * max(math.cos(math.radians(lat0)), 0.1))
            for m in range(sp.M):
                v[f"c_{tag}_{m}"] = amp / a_v
        if self.spec.id == "B4":
            v["beta12"] = 0.0
        return self.theta(**v)

    def canonicalize(self, theta: ParamVector) -> ParamVector:
        """Resolve the sign symmetry of operator models.

        Flipping every operator coefficient of one variable flips the sign of
        the cross-covariance, which ``beta12`` absorbs; the covariance is
        unchanged when both flip together. The canonical representative has a
        non-negative mean depth coefficient for each variable (for B3, whose
        correlation is pinned, only the joint flip is applied).
        """
        if self.spec.family != "diffop":
            return theta
        d = theta.as_dict()
        means = [np.mean([d[f"c_{tag}_{m}"] for m in range(sp.M)]) for tag, sp in zip(VAR_TAGS, self.splines)]

        def flip(tag):
            for k in list(d):
                if k in (f"a_{tag}", f"b_{tag}") or k.startswith(f"c_{tag}_"):
                    d[k] = -d[k]

        if means[0] < 0:
            flip("T")
            flip("S")
            means[1] = -means[1]
        if means[1] < 0 and self.spec.id != "B3":
            flip("S")
            if "beta12" in d:
                d["beta12"] = -d["beta12"]
        return ParamVector(theta.specs, tuple(d[n] for n in theta.names))


def model_with_beta(model: CovarianceModel, target_id: str) -> CovarianceModel:
    return replace(model, spec=get_model(target_id))
