"""Covariance and cross-covariance functions.

Variables are indexed 0 (temperature) and 1 (salinity).

Three families live here:

* the bivariate parsimonious Matérn on the sphere-times-depth distance,
* two single-variable baselines used in operational Argo mapping (a
  Gaussian-plus-exponential mixture and an anisotropic exponential),
* the differential-operator model, where each variable is a first-order
  operator ``a d/dL + b d/dl + c(p) d/dp`` applied to its own component of a
  bivariate parsimonious Matérn field.

Matrix evaluators work on a :class:`PairGeometry`, which caches everything
that depends only on the two point sets, so repeated likelihood evaluations
only redo the parameter-dependent arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .core import EARTH_RADIUS_KM, GeoPoint, chordal_distance, points_to_arrays
from .errors import DegenerateVarianceError, InvalidArgumentError
from .splines import SplineSpec, c_eval

ZERO_LAG_H = 1e-30


# --------------------------------------------------------------------------
# Matérn building blocks

def matern_norm(nu: float) -> float:
    """``2**(nu-1) * Gamma(nu)``, the value of ``M_nu`` at the origin."""
    return 2.0 ** (nu - 1.0) * math.gamma(nu)


def _mfun(order: float, x: np.ndarray) -> np.ndarray:
    """``x**order * K_order(x)`` for x > 0 and any real order (K is even in its order)."""
    if order == 0:
        kv = special.k0e(x)
    elif order == 1 or order == -1:
        kv = special.k1e(x)
    else:
        kv = special.kve(abs(order), x)
    return x**order * kv * np.exp(-x)


def matern_m(nu: float, x):
    """``M_nu(x) = x**nu K_nu(x)`` with its finite limit at ``x = 0``."""
    if not nu > 0:
        raise InvalidArgumentError(f"smoothness must be positive, got {nu}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InvalidArgumentError("Matérn argument must be finite and non-negative")
    out = np.full(x.shape, matern_norm(nu))
    pos = x > 0
    out[pos] = _mfun(nu, x[pos])
    return out if out.ndim else float(out)


def _m_with_limit(order: float, x: np.ndarray, zero: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    nz = ~zero
    out[nz] = _mfun(order, x[nz])
    out[zero] = matern_norm(order) if order > 0 else 0.0
    return out


def colocated_rho(beta12: float, nu11: float, nu22: float, dim_d: int = 3) -> float:
    """Colocated correlation implied by ``beta12`` under the parsimonious constraint."""
    nu12 = 0.5 * (nu11 + nu22)
    h = dim_d / 2.0
    lg = special.gammaln
    log_ratio = (0.5 * (lg(nu11 + h) - lg(nu11)) + 0.5 * (lg(nu22 + h) - lg(nu22))
                 + lg(nu12) - lg(nu12 + h))
    return float(beta12 * math.exp(log_ratio))


@dataclass(frozen=True)
class MaternParams:
    """Parsimonious bivariate Matérn parameters.

    ``a_h`` is in 1/km and ``a_v`` in 1/dbar. ``beta12 = +-1`` is allowed and
    corresponds to two variables driven by one shared field.
    """

    sigma2: tuple[float, float] = (1.0, 1.0)
    nu: tuple[float, float] = (1.0, 1.0)
    beta12: float = 0.0
    a_h: float = 1.0 / 300.0
    a_v: float = 1.0 / 100.0
    dim_d: int = 3

    def __post_init__(self):
        object.__setattr__(self, "sigma2", tuple(float(s) for s in self.sigma2))
        object.__setattr__(self, "nu", tuple(float(s) for s in self.nu))
        if len(self.sigma2) != 2 or len(self.nu) != 2:
            raise InvalidArgumentError("sigma2 and nu must have two entries")
        if not all(s > 0 and math.isfinite(s) for s in self.sigma2):
            raise InvalidArgumentError(f"variances must be positive, got {self.sigma2}")
        if not all(v > 0 and math.isfinite(v) for v in self.nu):
            raise InvalidArgumentError(f"smoothness must be positive, got {self.nu}")
        if not (math.isfinite(self.beta12) and abs(self.beta12) <= 1.0):
            raise InvalidArgumentError(f"beta12 must lie in [-1, 1], got {self.beta12}")
        if not (self.a_h > 0 and self.a_v > 0 and math.isfinite(self.a_h) and math.isfinite(self.a_v)):
            raise InvalidArgumentError(f"scales must be positive, got a_h={self.a_h}, a_v={self.a_v}")
        if self.dim_d < 1:
            raise InvalidArgumentError("dim_d must be >= 1")

    @property
    def nu12(self) -> float:
        return 0.5 * (self.nu[0] + self.nu[1])

    @property
    def rho12(self) -> float:
        return colocated_rho(self.beta12, self.nu[0], self.nu[1], self.dim_d)

    def nu_ij(self, i: int, j: int) -> float:
        return self.nu[i] if i == j else self.nu12

    def rho_ij(self, i: int, j: int) -> float:
        return 1.0 if i == j else self.rho12

    def alpha(self, i: int, j: int) -> float:
        nu = self.nu_ij(i, j)
        return self.rho_ij(i, j) * math.sqrt(self.sigma2[i] * self.sigma2[j]) / matern_norm(nu)


# --------------------------------------------------------------------------
# pairwise geometry

class PairGeometry:
    """Trigonometric terms of the scaled distance between two point sets.

    With ``G = 1 - sin L1 sin L2 - cos L1 cos L2 cos(l1 - l2)`` the chordal
    distance satisfies ``ch^2 = 2 R^2 G`` and the scaled squared distance is
    ``h = A G + a_v^2 (p1 - p2)^2`` with ``A = 2 R^2 a_h^2``. The first and
    mixed second partials of ``h`` in (L1, l1, p1) x (L2, l2, p2), radians and
    dbar, are ``A`` (or ``a_v^2``) times the cached arrays below.
    """

    def __init__(self, lat1, lon1, pres1, lat2, lon2, pres2, radius_km: float = EARTH_RADIUS_KM):
        L1 = np.radians(np.asarray(lat1, dtype=float))[:, None]
        l1 = np.radians(np.asarray(lon1, dtype=float))[:, None]
        L2 = np.radians(np.asarray(lat2, dtype=float))[None, :]
        l2 = np.radians(np.asarray(lon2, dtype=float))[None, :]
        self.radius_km = radius_km
        self.lat1, self.lon1 = np.asarray(lat1, dtype=float), np.asarray(lon1, dtype=float)
        self.lat2, self.lon2 = np.asarray(lat2, dtype=float), np.asarray(lon2, dtype=float)
        self.pres1 = np.asarray(pres1, dtype=float)
        self.pres2 = np.asarray(pres2, dtype=float)
        self.shape = (L1.shape[0], L2.shape[1])
        sL1, cL1, sL2, cL2 = np.sin(L1), np.cos(L1), np.sin(L2), np.cos(L2)
        dl = l1 - l2
        cdl, sdl = np.cos(dl), np.sin(dl)
        # haversine form keeps G accurate near zero separation
        self.G = 2.0 * (np.sin((L1 - L2) / 2) ** 2 + cL1 * cL2 * np.sin(dl / 2) ** 2)
        self.dp = self.pres1[:, None] - self.pres2[None, :]
        self.g_L1 = -cL1 * sL2 + sL1 * cL2 * cdl
        self.g_L2 = -sL1 * cL2 + cL1 * sL2 * cdl
        self.g_l1 = cL1 * cL2 * sdl          # d/dl2 is the negative of this
        self.g_L1L2 = -cL1 * cL2 - sL1 * sL2 * cdl
        self.g_L1l2 = sL1 * cL2 * sdl
        self.g_l1L2 = -cL1 * sL2 * sdl
        self.g_l1l2 = -cL1 * cL2 * cdl

    @classmethod
    def from_points(cls, pts1: Sequence[GeoPoint], pts2: Sequence[GeoPoint] | None = None,
                    radius_km: float = EARTH_RADIUS_KM) -> "PairGeometry":
        a = points_to_arrays(pts1)
        b = a if pts2 is None else points_to_arrays(pts2)
        return cls(*a, *b, radius_km=radius_km)

    def subset(self, rows, cols) -> "PairGeometry":
        out = object.__new__(PairGeometry)
        out.radius_km = self.radius_km
        out.lat1, out.lon1, out.pres1 = self.lat1[rows], self.lon1[rows], self.pres1[rows]
        out.lat2, out.lon2, out.pres2 = self.lat2[cols], self.lon2[cols], self.pres2[cols]
        ix = np.ix_(rows, cols)
        for name in ("G", "dp", "g_L1", "g_L2", "g_l1", "g_L1L2", "g_L1l2", "g_l1L2", "g_l1l2"):
            setattr(out, name, getattr(self, name)[ix])
        out.shape = out.G.shape
        return out

    def transpose(self) -> "PairGeometry":
        """Geometry with the roles of the two point sets swapped."""
        out = object.__new__(PairGeometry)
        out.radius_km = self.radius_km
        out.lat1, out.lon1, out.pres1 = self.lat2, self.lon2, self.pres2
        out.lat2, out.lon2, out.pres2 = self.lat1, self.lon1, self.pres1
        out.G = self.G.T
        out.dp = -self.dp.T
        out.g_L1, out.g_L2 = self.g_L2.T, self.g_L1.T
        out.g_l1 = -self.g_l1.T
        out.g_L1L2 = self.g_L1L2.T
        out.g_L1l2, out.g_l1L2 = self.g_l1L2.T, self.g_L1l2.T
        out.g_l1l2 = self.g_l1l2.T
        out.shape = out.G.shape
        return out

    def chordal_sq(self) -> np.ndarray:
        return 2.0 * self.radius_km**2 * self.G

    def h(self, a_h: float, a_v: float) -> np.ndarray:
        return 2.0 * self.radius_km**2 * a_h**2 * self.G + a_v**2 * self.dp**2


# --------------------------------------------------------------------------
# parsimonious Matérn

def matern_cross_matrix(i: int, j: int, geom: PairGeometry, theta: MaternParams) -> np.ndarray:
    h = geom.h(theta.a_h, theta.a_v)
    alpha = theta.alpha(i, j)
    if alpha == 0.0:
        return np.zeros(geom.shape)
    zero = h < ZERO_LAG_H
    x = np.sqrt(np.where(zero, 0.0, h))
    return alpha * _m_with_limit(theta.nu_ij(i, j), x, zero)


def parsimonious_matern(i: int, j: int, p1: GeoPoint, p2: GeoPoint, theta: MaternParams) -> float:
    """Cross-covariance between variable ``i`` at ``p1`` and variable ``j`` at ``p2``."""
    _check_var(i, j)
    geom = PairGeometry.from_points([p1], [p2])
    return float(matern_cross_matrix(i, j, geom, theta)[0, 0])


def _check_var(*vs):
    for v in vs:
        if v not in (0, 1):
            raise InvalidArgumentError(f"variable index must be 0 (temp) or 1 (psal), got {v}")


# --------------------------------------------------------------------------
# baselines

def gaussian_exponential_kernel(p1: GeoPoint, p2: GeoPoint) -> float:
    """Gaussian-plus-exponential horizontal correlation (140 km and 1111 km scales).

    The distance is the plain chordal distance; no coastline penalty term.
    """
    d = chordal_distance(p1, p2)
    return 0.77 * math.exp(-((d / 140.0) ** 2)) + 0.23 * math.exp(-d / 1111.0)


def anisotropic_exponential_kernel(p1: GeoPoint, p2: GeoPoint, sigma2: float, theta_lat: float,
                                   theta_lon: float) -> float:
    """Anisotropic exponential covariance in degree space, without the time term.

    The longitude difference is wrapped into [-180, 180) before scaling.
    """
    if not (sigma2 > 0 and theta_lat > 0 and theta_lon > 0):
        raise InvalidArgumentError("sigma2, theta_lat and theta_lon must be positive")
    dlat = p1.lat - p2.lat
    dlon = (p1.lon - p2.lon + 180.0) % 360.0 - 180.0
    return sigma2 * math.exp(-math.hypot(dlat / theta_lat, dlon / theta_lon))


# --------------------------------------------------------------------------
# differential-operator model

@dataclass(frozen=True)
class DiffOpParams:
    """Operator coefficients on top of a base parsimonious Matérn.

    ``a_coef`` and ``b_coef`` multiply derivatives in latitude and longitude
    (per radian); ``c_weights[i]`` are B-spline weights of the depth
    coefficient ``c_i(p)`` multiplying the pressure derivative (per dbar).
    ``d_coef`` scales an independent copy of the base field, undifferentiated.

    The base smoothness must exceed 1: differentiation lowers it by one.
    """

    base: MaternParams = field(default_factory=lambda: MaternParams(nu=(2.0, 2.0)))
    a_coef: tuple[float, float] = (0.0, 0.0)
    b_coef: tuple[float, float] = (0.0, 0.0)
    c_spline: tuple[SplineSpec, SplineSpec] = (SplineSpec(), SplineSpec())
    c_weights: tuple = (None, None)
    d_coef: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        ws = []
        for spec, w in zip(self.c_spline, self.c_weights):
            w = np.zeros(spec.M) if w is None else np.asarray(w, dtype=float).copy()
            if w.shape != (spec.M,):
                raise InvalidArgumentError(f"expected {spec.M} spline weights, got {w.shape}")
            w.setflags(write=False)
            ws.append(w)
        object.__setattr__(self, "c_weights", tuple(ws))
        for name in ("a_coef", "b_coef", "d_coef"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != 2 or not all(math.isfinite(x) for x in v):
                raise InvalidArgumentError(f"{name} must hold two finite numbers")
            object.__setattr__(self, name, v)
        if not all(np.all(np.isfinite(w)) for w in ws):
            raise InvalidArgumentError("spline weights must be finite")
        if min(self.base.nu) <= 1.0:
            raise InvalidArgumentError(f"base smoothness must exceed 1, got {self.base.nu}")

    def c_at(self, var: int, pres) -> np.ndarray:
        return np.asarray(c_eval(self.c_spline[var], self.c_weights[var], np.atleast_1d(pres)))


def diffop_cross_matrix(i: int, j: int, geom: PairGeometry, theta: DiffOpParams,
                        c1: np.ndarray | None = None, c2: np.ndarray | None = None,
                        scratch: dict | None = None) -> np.ndarray:
    """Covariance of ``L_i X_i`` at the first point set with ``L_j X_j`` at the second.

    ``c1``/``c2`` are the depth coefficients at ``geom.pres1``/``geom.pres2``
    and are computed from the splines when omitted. ``scratch`` is an optional
    dict that lets several blocks over the same geometry and scales share the
    Bessel evaluations.
    """
    base = theta.base
    alpha = base.alpha(i, j)
    if alpha == 0.0:
        return np.zeros(geom.shape)
    if c1 is None:
        c1 = theta.c_at(i, geom.pres1)
    if c2 is None:
        c2 = theta.c_at(j, geom.pres2)
    nu = base.nu_ij(i, j)
    A = 2.0 * geom.radius_km**2 * base.a_h**2
    av2 = base.a_v**2
    ai, bi, aj, bj = theta.a_coef[i], theta.b_coef[i], theta.a_coef[j], theta.b_coef[j]
    c1 = np.asarray(c1, dtype=float)[:, None]
    c2 = np.asarray(c2, dtype=float)[None, :]

    h = A * geom.G + av2 * geom.dp**2
    hp = 2.0 * av2 * geom.dp
    D1 = A * (ai * geom.g_L1 + bi * geom.g_l1) + c1 * hp
    D2 = A * (aj * geom.g_L2 - bj * geom.g_l1) - c2 * hp
    D12 = (A * (ai * aj * geom.g_L1L2 + ai * bj * geom.g_L1l2
                + bi * aj * geom.g_l1L2 + bi * bj * geom.g_l1l2)
           - 2.0 * av2 * c1 * c2)

    key = (nu, A, av2)
    if scratch is not None and key in scratch:
        zero, x, m_lo, m_mid = scratch[key]
    else:
        zero = h < ZERO_LAG_H
        x = np.sqrt(np.where(zero, 0.0, h))
        # the first term carries D1*D2 = O(h), which kills the log/power singularity of M_{nu-2}
        m_lo = np.zeros_like(x)
        nz = ~zero
        m_lo[nz] = _mfun(nu - 2.0, x[nz])
        m_mid = _m_with_limit(nu - 1.0, x, zero)
        if scratch is not None:
            scratch[key] = (zero, x, m_lo, m_mid)
    out = alpha * (0.25 * m_lo * (D1 * D2) - 0.5 * m_mid * D12)
    di, dj = theta.d_coef[i], theta.d_coef[j]
    if di != 0.0 and dj != 0.0:
        out = out + alpha * di * dj * _m_with_limit(nu, x, zero)
    return out


def diffop_cross_cov(i: int, j: int, p1: GeoPoint, p2: GeoPoint, theta: DiffOpParams) -> float:
    _check_var(i, j)
    geom = PairGeometry.from_points([p1], [p2])
    return float(diffop_cross_matrix(i, j, geom, theta)[0, 0])


def colocated_curve(theta: DiffOpParams, lat: float, pressures, lon: float = 0.0) -> list[tuple[float, float]]:
    """Temperature-salinity correlation at the same location as a function of pressure."""
    pres = np.asarray(pressures, dtype=float)
    out = []
    for p in pres:
        pt = GeoPoint(lat, lon, float(p))
        c11 = diffop_cross_cov(0, 0, pt, pt, theta)
        c22 = diffop_cross_cov(1, 1, pt, pt, theta)
        if not (c11 > 0 and c22 > 0):
            raise DegenerateVarianceError(f"zero marginal variance at pressure {p} dbar")
        r = diffop_cross_cov(0, 1, pt, pt, theta) / math.sqrt(c11 * c22)
        out.append((float(p), float(np.clip(r, -1.0, 1.0))))
    return out
