"""Nonparametric moment estimators for zero-mean residuals.

Two flavours:

* local cylinder moments (plug-in mean-centred variances and colocated
  correlation over all observations inside a vertical cylinder), used for
  exploratory depth profiles;
* Gaussian-kernel smoothed variances, correlation seeds and cross-covariances,
  which feed the semi-parametric models and the least-squares pre-fit.

The smoothed estimators treat the data as zero-mean and never centre them.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .core import (DEFAULT_CYLINDER_HALF_HEIGHT_DB, DEFAULT_CYLINDER_RADIUS_KM, EARTH_RADIUS_KM,
                   GeoPoint, ProfileDataset, chordal_distance_arrays, cylinder_neighborhood,
                   as_coordinate_arrays)
from .errors import DegenerateVarianceError, InsufficientDataError, InvalidArgumentError

log = logging.getLogger(__name__)

# counts correlation seeds pulled back into [-1, 1] after rounding overshoot
clip_events = {"beta": 0}


@dataclass(frozen=True)
class KernelBandwidths:
    """Horizontal (km^2) and vertical (dbar^2) bandwidths of the smoothing kernel."""

    lambda_h: float = 300.0**2
    lambda_v: float = 50.0**2

    def __post_init__(self):
        if not (self.lambda_h > 0 and self.lambda_v > 0):
            raise InvalidArgumentError(f"bandwidths must be positive, got {self}")


@dataclass(frozen=True)
class EmpiricalMoments:
    locations: tuple[GeoPoint, ...]
    sigma2_hat: np.ndarray   # (n_locations, 2)
    rho_hat: np.ndarray      # (n_locations,)
    bandwidths: KernelBandwidths


def local_moments(center: GeoPoint, data: ProfileDataset,
                  radius_km: float = DEFAULT_CYLINDER_RADIUS_KM,
                  half_height_db: float = DEFAULT_CYLINDER_HALF_HEIGHT_DB) -> tuple[float, float, float]:
    """Cylinder variances of T and S and their colocated correlation."""
    obs = cylinder_neighborhood(center, data, radius_km, half_height_db)
    if len(obs) < 2:
        raise InsufficientDataError(f"{len(obs)} observation(s) in the cylinder around {center}")
    t = np.array([o.temp for o in obs])
    s = np.array([o.psal for o in obs])
    dt, ds = t - t.mean(), s - s.mean()
    vt, vs = float(np.mean(dt**2)), float(np.mean(ds**2))
    if vt <= 0 or vs <= 0:
        raise DegenerateVarianceError(f"zero variance in the cylinder around {center}")
    rho = float(np.mean(dt * ds) / math.sqrt(vt * vs))
    return vt, vs, float(np.clip(rho, -1.0, 1.0))


def smoothing_kernel(p1: GeoPoint, p2: GeoPoint, bw: KernelBandwidths) -> float:
    ch = float(chordal_distance_arrays(p1.lat, p1.lon, p2.lat, p2.lon))
    return math.exp(-(ch**2 / bw.lambda_h + (p1.pres - p2.pres) ** 2 / bw.lambda_v))


def kernel_weights(lat, lon, pres, data: ProfileDataset, bw: KernelBandwidths) -> np.ndarray:
    """Kernel weights between query locations (rows) and observations (columns)."""
    lat, lon, pres = (np.atleast_1d(np.asarray(x, dtype=float)) for x in (lat, lon, pres))
    ch = chordal_distance_arrays(lat[:, None], lon[:, None], data.lat[None, :], data.lon[None, :],
                                 EARTH_RADIUS_KM)
    return np.exp(-(ch**2 / bw.lambda_h + (pres[:, None] - data.pres[None, :]) ** 2 / bw.lambda_v))


class SmoothedMoments:
    """Kernel-smoothed second moments of one dataset, evaluated at any locations."""

    def __init__(self, data: ProfileDataset, bw: KernelBandwidths):
        if len(data) == 0:
            raise InsufficientDataError("empty dataset")
        self.data = data
        self.bw = bw
        self._z = (data.temp, data.psal)

    def _weights(self, pts) -> tuple[np.ndarray, np.ndarray]:
        lat, lon, pres = as_coordinate_arrays(pts)
        W = kernel_weights(lat, lon, pres, self.data, self.bw)
        s = W.sum(axis=1)
        if np.any(s <= 0):
            raise InsufficientDataError("no observation carries kernel weight near a query location")
        return W, s

    def sigma2(self, var: int, pts) -> np.ndarray:
        W, s = self._weights(pts)
        return (W @ self._z[var] ** 2) / s

    def cross_cov(self, i: int, j: int, pts_a, pts_b=None) -> np.ndarray:
        """Smoothed cross-covariance matrix between two location sets."""
        Wa, sa = self._weights(pts_a)
        Wb, sb = (Wa, sa) if pts_b is None else self._weights(pts_b)
        zz = self._z[i] * self._z[j]
        num = (np.sqrt(Wa) * zz) @ np.sqrt(Wb).T
        return num / np.sqrt(np.outer(sa, sb))

    def beta(self, i: int, j: int, pts_a, pts_b=None) -> np.ndarray:
        C = self.cross_cov(i, j, pts_a, pts_b)
        sa = np.sqrt(self.sigma2(i, pts_a))
        sb = sa if (pts_b is None and i == j) else np.sqrt(self.sigma2(j, pts_a if pts_b is None else pts_b))
        den = np.outer(sa, sb)
        if np.any(den <= 0):
            raise DegenerateVarianceError("zero smoothed variance in the correlation denominator")
        b = C / den
        over = np.abs(b) > 1.0
        if np.any(over):
            if np.any(np.abs(b[over]) - 1.0 > 1e-8):
                log.warning("correlation seed exceeds 1 by more than rounding: %g", np.max(np.abs(b)))
            clip_events["beta"] += int(over.sum())
            b = np.clip(b, -1.0, 1.0)
        return b


def smoothed_variance(s: GeoPoint, var: int, data: ProfileDataset, bw: KernelBandwidths) -> float:
    return float(SmoothedMoments(data, bw).sigma2(var, [s])[0])


def smoothed_beta(s1: GeoPoint, s2: GeoPoint, data: ProfileDataset, bw: KernelBandwidths,
                  i: int = 0, j: int = 1) -> float:
    return float(SmoothedMoments(data, bw).beta(i, j, [s1], [s2])[0, 0])


def smoothed_cross_cov(s1: GeoPoint, s2: GeoPoint, i: int, j: int, data: ProfileDataset,
                       bw: KernelBandwidths) -> float:
    return float(SmoothedMoments(data, bw).cross_cov(i, j, [s1], [s2])[0, 0])


def empirical_moments(points: Sequence[GeoPoint], data: ProfileDataset,
                      bw: KernelBandwidths) -> EmpiricalMoments:
    sm = SmoothedMoments(data, bw)
    pts = tuple(points)
    s2 = np.column_stack([sm.sigma2(0, pts), sm.sigma2(1, pts)])
    cc = sm.cross_cov(0, 1, pts)
    rho = np.clip(np.diag(cc) / np.sqrt(s2[:, 0] * s2[:, 1]), -1.0, 1.0)
    return EmpiricalMoments(pts, s2, rho, bw)


# --------------------------------------------------------------------------
# lattice of smoothed moments

LATTICE_HEADER = ["lat", "lon", "pres", "sig2_T", "sig2_S", "rho"]


@dataclass(frozen=True)
class MomentLattice:
    """Smoothed variances and colocated correlation on a regular lat/lon/pres grid."""

    lat: np.ndarray
    lon: np.ndarray
    pres: np.ndarray
    sig2: np.ndarray   # (2, nlat, nlon, npres)
    rho: np.ndarray    # (nlat, nlon, npres)

    def _interp(self, grid, lat, lon, pres):
        axes, values = [], grid
        for k, ax in enumerate((self.lat, self.lon, self.pres)):
            if ax.size == 1:  # degenerate axis: constant along it
                values = np.take(values, 0, axis=len(axes))
            else:
                axes.append(ax)
        q = [np.asarray(x, dtype=float) for x, ax in zip((lat, lon, pres), (self.lat, self.lon, self.pres))
             if ax.size > 1]
        if not axes:
            return np.full(np.shape(lat), float(values))
        f = RegularGridInterpolator(tuple(axes), values, method="linear", bounds_error=False, fill_value=None)
        return f(np.column_stack([np.ravel(x) for x in q])).reshape(np.shape(lat))

    def sigma2_at(self, var: int, lat, lon, pres) -> np.ndarray:
        return self._interp(self.sig2[var], lat, lon, pres)

    def rho_at(self, lat, lon, pres) -> np.ndarray:
        return self._interp(self.rho, lat, lon, pres)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LATTICE_HEADER)
            for a, la in enumerate(self.lat):
                for b, lo in enumerate(self.lon):
                    for c, p in enumerate(self.pres):
                        w.writerow([repr(float(la)), repr(float(lo)), repr(float(p)),
                                    repr(float(self.sig2[0, a, b, c])), repr(float(self.sig2[1, a, b, c])),
                                    repr(float(self.rho[a, b, c]))])

    @classmethod
    def from_csv(cls, path) -> "MomentLattice":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise InvalidArgumentError(f"empty lattice file {path}")
        lat = np.unique([float(r["lat"]) for r in rows])
        lon = np.unique([float(r["lon"]) for r in rows])
        pres = np.unique([float(r["pres"]) for r in rows])
        sig2 = np.full((2, lat.size, lon.size, pres.size), np.nan)
        rho = np.full((lat.size, lon.size, pres.size), np.nan)
        for r in rows:
            a = np.searchsorted(lat, float(r["lat"]))
            b = np.searchsorted(lon, float(r["lon"]))
            c = np.searchsorted(pres, float(r["pres"]))
            sig2[:, a, b, c] = float(r["sig2_T"]), float(r["sig2_S"])
            rho[a, b, c] = float(r["rho"])
        if np.isnan(rho).any():
            raise InvalidArgumentError(f"lattice file {path} is not a full grid")
        return cls(lat, lon, pres, sig2, rho)


def default_lattice_axes(data: ProfileDataset, dlat: float = 1.0, dlon: float = 1.0, dpres: float = 10.0):
    """1 deg x 1 deg x 10 dbar axes covering the data's bounding box."""
    def axis(lo, hi, step):
        lo, hi = step * math.floor(lo / step), step * math.ceil(hi / step)
        return np.arange(lo, hi + step / 2, step)
    return (axis(data.lat.min(), data.lat.max(), dlat),
            axis(data.lon.min(), data.lon.max(), dlon),
            np.clip(axis(data.pres.min(), data.pres.max(), dpres), 0.0, 2000.0))


def moment_lattice(data: ProfileDataset, bw: KernelBandwidths, lat=None, lon=None, pres=None) -> MomentLattice:
    if lat is None or lon is None or pres is None:
        dl, dL, dp = default_lattice_axes(data)
        lat = dl if lat is None else lat
        lon = dL if lon is None else lon
        pres = dp if pres is None else pres
    lat, lon, pres = (np.asarray(x, dtype=float) for x in (lat, lon, pres))
    G = np.meshgrid(lat, lon, pres, indexing="ij")
    q = tuple(g.ravel() for g in G)
    sm = SmoothedMoments(data, bw)
    s2 = np.stack([sm.sigma2(0, q), sm.sigma2(1, q)])
    W, s = sm._weights(q)
    num = W @ (data.temp * data.psal) / s
    rho = np.clip(num / np.sqrt(s2[0] * s2[1]), -1.0, 1.0)
    shape = G[0].shape
    return MomentLattice(lat, lon, pres, s2.reshape((2,) + shape), rho.reshape(shape))
