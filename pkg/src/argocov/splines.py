"""B-spline bases for the depth-varying operator coefficients.

Knot vectors are clamped at both ends (the boundary knots are repeated
``degree + 1`` times), so a spline with ``K`` distinct knots and degree ``k``
has ``K + k - 1`` basis functions that sum to one on ``[knots[0], knots[-1]]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .errors import InvalidArgumentError, OutOfDomainError

# ocean stratification boundaries: mixed layer / pycnocline / intermediate zone
STRATIFICATION_KNOTS = (0.0, 100.0, 1000.0, 2000.0)


@dataclass(frozen=True)
class SplineSpec:
    knots: tuple[float, ...] = STRATIFICATION_KNOTS
    degree: int = 3

    def __post_init__(self):
        knots = tuple(float(k) for k in self.knots)
        object.__setattr__(self, "knots", knots)
        if len(knots) < 2:
            raise InvalidArgumentError("need at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise InvalidArgumentError(f"knots must be strictly increasing: {knots}")
        if not (isinstance(self.degree, (int, np.integer)) and self.degree >= 0):
            raise InvalidArgumentError(f"degree must be a non-negative integer, got {self.degree}")

    @property
    def M(self) -> int:
        return len(self.knots) + self.degree - 1

    @property
    def full_knots(self) -> np.ndarray:
        k = self.degree
        kn = np.asarray(self.knots)
        return np.r_[[kn[0]] * k, kn, [kn[-1]] * k]

    @property
    def span(self) -> tuple[float, float]:
        return self.knots[0], self.knots[-1]


def basis_matrix(spec: SplineSpec, p) -> np.ndarray:
    """Basis functions at each pressure in ``p``; shape ``(len(p), M)``."""
    p = np.atleast_1d(np.asarray(p, dtype=float))
    lo, hi = spec.span
    bad = ~((p >= lo) & (p <= hi))
    if np.any(bad):
        raise OutOfDomainError(f"pressure {p[bad][0]} outside knot span [{lo}, {hi}]")
    if spec.degree == 0:
        # right endpoint belongs to the last interval
        idx = np.clip(np.searchsorted(spec.knots, p, side="right") - 1, 0, spec.M - 1)
        out = np.zeros((p.size, spec.M))
        out[np.arange(p.size), idx] = 1.0
        return out
    return BSpline.design_matrix(p, spec.full_knots, spec.degree).toarray()


def basis_eval(spec: SplineSpec, p: float) -> np.ndarray:
    return basis_matrix(spec, [p])[0]


def c_eval(spec: SplineSpec, weights, p):
    """Spline value ``sum_m w_m B_m(p)``; scalar in, scalar out; array in, array out."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (spec.M,):
        raise InvalidArgumentError(f"expected {spec.M} spline weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidArgumentError("spline weights must be finite")
    if np.ndim(p) == 0:
        return float(basis_eval(spec, float(p)) @ w)
    return basis_matrix(spec, p) @ w


def refine_knots(spec: SplineSpec) -> SplineSpec:
    """Insert the midpoint of every pair of consecutive knots."""
    kn = np.asarray(spec.knots)
    mids = (kn[:-1] + kn[1:]) / 2
    return SplineSpec(tuple(np.union1d(kn, mids)), spec.degree)


def project_weights(old: SplineSpec, w, new: SplineSpec, n_grid: int = 401) -> np.ndarray:
    """Weights on ``new`` reproducing the spline ``(old, w)`` in least squares.

    When ``new`` refines ``old`` (same degree, superset of knots) the old spline
    lies in the new space and the projection is exact up to rounding.
    """
    lo = max(old.span[0], new.span[0])
    hi = min(old.span[1], new.span[1])
    grid = np.linspace(lo, hi, n_grid)
    B = basis_matrix(new, grid)
    y = c_eval(old, w, grid)
    sol, *_ = np.linalg.lstsq(B, y, rcond=None)
    return sol
