"""Covariance assembly, Cholesky log-likelihood and eigenvalue repair.

Ordering contract: every bivariate matrix and vector in the package is
variable-major, i.e. all temperature entries for observations ``0..n-1``
followed by all salinity entries in the same observation order.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, eigh, solve_triangular
from scipy.linalg.lapack import dpotrf

from .core import GeoPoint, as_coordinate_arrays
from .errors import InvalidArgumentError, NotPositiveDefiniteError
from .kernels import ZERO_LAG_H, PairGeometry, _m_with_limit, _mfun
from .models import CovarianceModel, ParamVector

log = logging.getLogger(__name__)

JITTER_LADDER = (1e-10, 1e-8, 1e-6)
DEFAULT_TILE = 256
PD_FLOOR = 1e-17


@dataclass(frozen=True)
class CovMatrix:
    values: np.ndarray
    n_obs: int

    def __post_init__(self):
        if self.values.shape != (2 * self.n_obs, 2 * self.n_obs):
            raise InvalidArgumentError(f"expected a {2 * self.n_obs} square matrix, got {self.values.shape}")


@dataclass(frozen=True)
class LoglikResult:
    loglik: float
    logdet: float
    quadform: float
    jitter: float


class Assembler:
    """Builds ``Sigma(theta)`` for one fixed set of points.

    Geometry and parameter-free model terms are computed once at
    construction; :meth:`matrix` only redoes parameter-dependent arithmetic.
    """

    def __init__(self, model: CovarianceModel, points: Sequence[GeoPoint] | tuple, tile: int | None = None,
                 workers: int = 1):
        lat, lon, pres = as_coordinate_arrays(points)
        if len(lat) == 0:
            raise InvalidArgumentError("cannot assemble a covariance over zero points")
        self.model = model
        self.n = len(lat)
        self.tile = tile
        self.workers = workers
        self.geom = PairGeometry(lat, lon, pres, lat, lon, pres)
        self.cache = model.prepare(self.geom)
        self._upper = np.triu(np.ones((self.n, self.n), dtype=bool))

    def _tiles(self):
        t = self.tile or self.n
        starts = range(0, self.n, t)
        return [(r, c) for r in starts for c in starts if c >= r]

    def _block(self, i, j, theta, kp, rows, cols, scratch=None):
        if rows is None:
            return self.model.cross_matrix(i, j, self.geom, theta, self.cache, kp, scratch)
        g = self.geom.subset(rows, cols)
        cache = _subset_cache(self.cache, rows, cols)
        return self.model.cross_matrix(i, j, g, theta, cache, kp)

    def _symmetric_bessel(self, kp) -> dict:
        # h is symmetric on a self-geometry: evaluate the Bessel terms on one triangle
        base = kp.base
        nu = base.nu_ij(0, 1)
        if base.nu[0] != base.nu[1]:
            return {}
        A = 2.0 * self.geom.radius_km**2 * base.a_h**2
        av2 = base.a_v**2
        upper = self._upper
        h = (A * self.geom.G + av2 * self.geom.dp**2)[upper]
        zero = h < ZERO_LAG_H
        x = np.sqrt(np.where(zero, 0.0, h))
        m_lo = np.zeros_like(x)
        m_lo[~zero] = _mfun(nu - 2.0, x[~zero])
        m_mid = _m_with_limit(nu - 1.0, x, zero)
        full = []
        for v in (zero, x, m_lo, m_mid):
            M = np.zeros((self.n, self.n), dtype=v.dtype)
            M[upper] = v
            full.append(np.where(upper, M, M.T))
        return {(nu, A, av2): tuple(full)}

    def matrix(self, theta: ParamVector) -> np.ndarray:
        n = self.n
        kp = None if self.model.spec.family == "plugin" else self.model.kernel_params(theta)
        out = np.empty((2 * n, 2 * n))
        pairs = ((0, 0), (1, 1), (0, 1))
        if self.tile is None or self.tile >= n:
            scratch = self._symmetric_bessel(kp) if self.model.spec.family == "diffop" else None
            for i, j in pairs:
                out[i * n:(i + 1) * n, j * n:(j + 1) * n] = self._block(i, j, theta, kp, None, None, scratch)
        else:
            t = self.tile

            def work(job):
                (i, j), (r, c) = job
                rows = np.arange(r, min(r + t, n))
                cols = np.arange(c, min(c + t, n))
                blk = self._block(i, j, theta, kp, rows, cols)
                out[i * n + r:i * n + r + len(rows), j * n + c:j * n + c + len(cols)] = blk
                if (i, j) == (0, 1) and r != c:
                    # off-diagonal tile of the cross block below the diagonal
                    blk2 = self._block(i, j, theta, kp, cols, rows)
                    out[i * n + c:i * n + c + len(cols), j * n + r:j * n + r + len(rows)] = blk2

            jobs = [(p, rc) for p in pairs for rc in self._tiles()]
            if self.workers > 1:
                with ThreadPoolExecutor(self.workers) as ex:
                    list(ex.map(work, jobs))
            else:
                for job in jobs:
                    work(job)
        # mirror: diagonal blocks from their upper triangles, the S-T block from T-S
        for i in (0, 1):
            blk = out[i * n:(i + 1) * n, i * n:(i + 1) * n]
            blk[...] = np.where(self._upper, blk, blk.T)
        out[n:, :n] = out[:n, n:].T
        nug = self.model.nugget
        if nug[0] or nug[1]:
            out[np.arange(n), np.arange(n)] += nug[0]
            out[np.arange(n, 2 * n), np.arange(n, 2 * n)] += nug[1]
        return out


def _subset_cache(cache: dict, rows, cols) -> dict:
    out = {}
    for k, v in cache.items():
        if k in ("B1", "sig1"):
            out[k] = tuple(x[rows] for x in v)
        elif k in ("B2", "sig2"):
            out[k] = tuple(x[cols] for x in v)
        else:
            out[k] = v[np.ix_(rows, cols)]
    return out


def assemble(model: CovarianceModel, theta: ParamVector, points: Sequence[GeoPoint],
             tile: int | None = DEFAULT_TILE, workers: int = 1) -> CovMatrix:
    """Bivariate covariance matrix of the observations at ``points`` (variable-major)."""
    a = Assembler(model, points, tile=tile, workers=workers)
    return CovMatrix(a.matrix(theta), a.n)


def cross_cov_items(model: CovarianceModel, theta: ParamVector, pts_a, vars_a, pts_b, vars_b) -> np.ndarray:
    """Covariance between two lists of (location, variable) items."""
    la = as_coordinate_arrays(pts_a)
    lb = as_coordinate_arrays(pts_b)
    vars_a, vars_b = np.asarray(vars_a), np.asarray(vars_b)
    geom = PairGeometry(*la, *lb)
    cache = model.prepare(geom)
    kp = None if model.spec.family == "plugin" else model.kernel_params(theta)
    out = np.zeros((len(vars_a), len(vars_b)))
    for i in (0, 1):
        rows = np.flatnonzero(vars_a == i)
        if rows.size == 0:
            continue
        for j in (0, 1):
            cols = np.flatnonzero(vars_b == j)
            if cols.size == 0:
                continue
            g = geom.subset(rows, cols)
            out[np.ix_(rows, cols)] = model.cross_matrix(i, j, g, theta, _subset_cache(cache, rows, cols), kp)
    return out


# --------------------------------------------------------------------------

def cholesky_with_jitter(S: np.ndarray, jitter: float = 0.0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, retrying along the jitter ladder on failure."""
    S = np.asarray(S, dtype=float)
    scale = float(np.mean(np.diag(S)))
    if not math.isfinite(scale):
        raise NotPositiveDefiniteError("covariance has non-finite entries")
    tries = [jitter] + [j * abs(scale) for j in JITTER_LADDER if j * abs(scale) > jitter]
    for jit in tries:
        A = S if jit == 0.0 else S + jit * np.eye(S.shape[0])
        L, info = dpotrf(A, lower=1, clean=1, overwrite_a=0)
        if info == 0:
            return L, jit
    raise NotPositiveDefiniteError(f"Cholesky failed up to jitter {tries[-1]:.3g}")


def chol_loglik(S, z, jitter: float = 0.0) -> LoglikResult:
    """Gaussian log-likelihood of ``z ~ N(0, S)`` through a triangular factorization."""
    S = S.values if isinstance(S, CovMatrix) else np.asarray(S, dtype=float)
    z = np.asarray(z, dtype=float)
    if S.shape != (z.size, z.size):
        raise InvalidArgumentError(f"dimension mismatch: Sigma {S.shape}, z {z.shape}")
    L, jit = cholesky_with_jitter(S, jitter)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    w = solve_triangular(L, z, lower=True, check_finite=False)
    quad = float(w @ w)
    ll = -0.5 * z.size * math.log(2 * math.pi) - 0.5 * logdet - 0.5 * quad
    return LoglikResult(ll, logdet, quad, jit)


def nearest_pd_fix(S, floor: float = PD_FLOOR):
    """Raise every eigenvalue below ``floor`` to ``floor``, keeping the eigenvectors."""
    is_cov = isinstance(S, CovMatrix)
    A = S.values if is_cov else np.asarray(S, dtype=float)
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(A))))):
        raise InvalidArgumentError("nearest_pd_fix needs a symmetric matrix")
    A = 0.5 * (A + A.T)
    w, V = eigh(A)
    if np.all(w >= floor):
        out = A
    else:
        out = (V * np.maximum(w, floor)) @ V.T
        out = 0.5 * (out + out.T)
    return CovMatrix(out, S.n_obs) if is_cov else out


def solve_chol(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    return cho_solve((L, True), b, check_finite=False)
