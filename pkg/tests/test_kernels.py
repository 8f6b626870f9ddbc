import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from argocov.core import GeoPoint
from argocov.errors import DegenerateVarianceError, InvalidArgumentError
from argocov.kernels import (DiffOpParams, MaternParams, PairGeometry, anisotropic_exponential_kernel,
                             colocated_curve, colocated_rho, diffop_cross_cov, diffop_cross_matrix,
                             gaussian_exponential_kernel, matern_m, matern_norm, parsimonious_matern)
from argocov.splines import SplineSpec

from oracles import R_EARTH, matern_base


def test_matern_m_limit_and_values():
    assert matern_m(1.0, 0.0) == pytest.approx(1.0)
    assert matern_m(2.5, 0.0) == pytest.approx(matern_norm(2.5))
    x = np.array([1e-8, 0.3, 2.0, 30.0])
    assert np.allclose(matern_m(1.5, x), x**1.5 * special.kv(1.5, x), rtol=1e-12)
    assert matern_m(1.0, 1e-9) == pytest.approx(1.0, rel=1e-6)
    assert matern_m(1.0, 800.0) >= 0.0
    with pytest.raises(InvalidArgumentError):
        matern_m(0.0, 1.0)
    with pytest.raises(InvalidArgumentError):
        matern_m(1.0, -1.0)


@given(st.floats(-1, 1), st.floats(0.2, 4))
def test_colocated_rho_equal_smoothness_is_beta(beta, nu):
    assert colocated_rho(beta, nu, nu) == pytest.approx(beta, abs=1e-14)


def test_colocated_rho_unequal_smoothness_shrinks():
    r = colocated_rho(1.0, 0.5, 2.5)
    g = math.gamma
    ref = math.sqrt(g(2.0) / g(0.5) * g(4.0) / g(2.5)) * g(1.5) / g(3.0)
    assert r == pytest.approx(ref)
    assert r < 1.0


@pytest.mark.parametrize("kw", [dict(sigma2=(0.0, 1.0)), dict(nu=(1.0, -1.0)), dict(beta12=1.2),
                                dict(a_h=0.0), dict(sigma2=(1.0,))])
def test_matern_params_validation(kw):
    with pytest.raises(InvalidArgumentError):
        MaternParams(**kw)


def test_parsimonious_matern_against_direct_formula():
    th = MaternParams(sigma2=(2.0, 0.5), nu=(1.0, 1.0), beta12=0.6, a_h=1 / 250, a_v=1 / 80)
    p, q = GeoPoint(40, -175, 300), GeoPoint(41, -174, 420)
    s1 = (math.radians(40), math.radians(-175), 300)
    s2 = (math.radians(41), math.radians(-174), 420)
    assert parsimonious_matern(0, 1, p, q, th) == pytest.approx(
        math.sqrt(2.0 * 0.5) * matern_base(1.0, 0.6, th.a_h, th.a_v, s1, s2), rel=1e-10)
    assert parsimonious_matern(0, 0, p, p, th) == pytest.approx(2.0)
    assert parsimonious_matern(1, 0, q, p, th) == pytest.approx(parsimonious_matern(0, 1, p, q, th))
    with pytest.raises(InvalidArgumentError):
        parsimonious_matern(0, 2, p, q, th)


def _random_diffop(rng, beta=0.5):
    sp = SplineSpec()
    a_h, a_v = 1 / 300, 1 / 120
    return DiffOpParams(MaternParams(nu=(2.0, 2.0), beta12=beta, a_h=a_h, a_v=a_v),
                        tuple(rng.normal(size=2) / (R_EARTH * a_h)), tuple(rng.normal(size=2) / (R_EARTH * a_h)),
                        (sp, sp), tuple(rng.normal(size=6) / a_v for _ in range(2)))


def test_diffop_swaps_consistently():
    rng = np.random.default_rng(1)
    th = _random_diffop(rng)
    p, q = GeoPoint(39, -176, 250), GeoPoint(40.5, -174, 700)
    for i in (0, 1):
        for j in (0, 1):
            assert diffop_cross_cov(i, j, p, q, th) == pytest.approx(diffop_cross_cov(j, i, q, p, th), rel=1e-12)


def test_diffop_marginal_variance_at_zero_lag():
    rng = np.random.default_rng(2)
    th = _random_diffop(rng)
    p = GeoPoint(40, -175, 600)
    a, b, c = th.a_coef[0], th.b_coef[0], float(th.c_at(0, 600.0)[0])
    hu = R_EARTH * th.base.a_h
    expected = (matern_norm(1.0) / matern_norm(2.0)) * (
        (hu * a) ** 2 + (hu * math.cos(math.radians(40)) * b) ** 2 + (th.base.a_v * c) ** 2)
    assert diffop_cross_cov(0, 0, p, p, th) == pytest.approx(expected, rel=1e-12)


def test_diffop_is_continuous_at_zero_lag():
    rng = np.random.default_rng(3)
    th = _random_diffop(rng)
    p = GeoPoint(40, -175, 600)
    near = GeoPoint(40, -175, 600 + 1e-4)
    for i, j in ((0, 0), (0, 1), (1, 1)):
        assert diffop_cross_cov(i, j, p, near, th) == pytest.approx(diffop_cross_cov(i, j, p, p, th), rel=1e-5)


def test_diffop_zero_beta_gives_zero_cross_block():
    rng = np.random.default_rng(4)
    th = _random_diffop(rng, beta=0.0)
    g = PairGeometry.from_points([GeoPoint(40, -175, 10), GeoPoint(41, -175, 900)])
    assert not np.any(diffop_cross_matrix(0, 1, g, th))


def test_diffop_requires_smoothness_above_one():
    with pytest.raises(InvalidArgumentError):
        DiffOpParams(MaternParams(nu=(1.0, 1.0)))
    with pytest.raises(InvalidArgumentError):
        DiffOpParams(c_weights=(np.ones(3), None))


def test_diffop_d_term_adds_base_covariance():
    rng = np.random.default_rng(5)
    th = _random_diffop(rng)
    from dataclasses import replace
    th_d = replace(th, d_coef=(0.7, 0.4))
    p, q = GeoPoint(40, -175, 100), GeoPoint(40.2, -175.3, 150)
    s1 = (math.radians(40), math.radians(-175), 100)
    s2 = (math.radians(40.2), math.radians(-175.3), 150)
    extra = 0.7 * 0.4 * matern_base(2.0, 0.5, th.base.a_h, th.base.a_v, s1, s2)
    assert diffop_cross_cov(0, 1, p, q, th_d) == pytest.approx(diffop_cross_cov(0, 1, p, q, th) + extra, rel=1e-10)


def test_geometry_transpose_round_trip():
    pts1 = [GeoPoint(40, -175, 10), GeoPoint(42, -170, 500)]
    pts2 = [GeoPoint(39, 179, 1000)]
    g = PairGeometry.from_points(pts1, pts2)
    gt = PairGeometry.from_points(pts2, pts1)
    t = g.transpose()
    for name in ("G", "dp", "g_L1", "g_L2", "g_l1", "g_L1L2", "g_L1l2", "g_l1L2", "g_l1l2"):
        assert np.allclose(getattr(t, name), getattr(gt, name), atol=1e-14), name


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1))
def test_colocated_curve_is_a_correlation(beta):
    rng = np.random.default_rng(6)
    th = _random_diffop(rng, beta=beta)
    curve = colocated_curve(th, 40.0, np.linspace(0, 2000, 9), -175.0)
    assert all(-1 <= r <= 1 for _, r in curve)
    if beta == 0:
        assert all(r == 0 for _, r in curve)


def test_colocated_curve_degenerate_variance():
    with pytest.raises(DegenerateVarianceError):
        colocated_curve(DiffOpParams(), 10.0, [100.0])


def test_baseline_kernels():
    p = GeoPoint(10, 20, 0)
    assert gaussian_exponential_kernel(p, p) == pytest.approx(1.0)
    assert gaussian_exponential_kernel(p, GeoPoint(12, 20, 0)) < 1.0
    assert anisotropic_exponential_kernel(p, p, 2.0, 1.0, 2.0) == 2.0
    wrapped = anisotropic_exponential_kernel(GeoPoint(0, 179, 0), GeoPoint(0, -179, 0), 1.0, 1.0, 2.0)
    assert wrapped == pytest.approx(math.exp(-1.0))
    with pytest.raises(InvalidArgumentError):
        anisotropic_exponential_kernel(p, p, 0.0, 1.0, 1.0)
