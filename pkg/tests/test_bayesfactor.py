import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from matbf.bayesfactor import (KnownVCurve, UnknownVCurve, acceptance_ellipsoid, bf_derivative_known_v,
                               bf_derivative_unknown_v, bf_known_v, bf_unknown_v, kappa_known_v,
                               log_kappa_known_v, log_kappa_unknown_v, norm_const_known_v,
                               norm_const_unknown_v, sigma_H)
from matbf.conjugate import alpha_low_niw, predictive_known_v, predictive_niw, update_known_v
from matbf.core import DomainError, KnownVModel
from matbf.univariate import univ_acceptance_interval, univ_bf_closed_form

from _helpers import known_v_setup, niw_setup

dims = st.tuples(st.integers(1, 4), st.integers(1, 4))


@settings(max_examples=40, deadline=None)
@given(dims, st.floats(0.01, 0.99), st.integers(0, 10_000))
def test_known_v_bf_is_ratio_of_predictives(pn, alpha, seed):
    rng = np.random.default_rng(seed)
    model, post, _ = known_v_setup(rng, *pn)
    Y = post.M_star + 2 * rng.standard_normal(pn)
    pred = predictive_known_v(post, model, alpha)
    ev = bf_known_v(Y, post, model, alpha)
    assert ev.log_H == pytest.approx(pred.logpdf_null(Y) - pred.logpdf_alt(Y), rel=1e-9, abs=1e-9)
    curve = KnownVCurve(Y, post, model)
    assert curve.log_h(alpha) == pytest.approx(ev.log_H, rel=1e-9, abs=1e-9)
    assert curve.log_kappa(alpha) == pytest.approx(ev.log_kappa, rel=1e-9, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(dims, st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_unknown_v_bf_is_ratio_of_predictives(pn, frac, seed):
    rng = np.random.default_rng(seed)
    model, post, _ = niw_setup(rng, *pn)
    lo = alpha_low_niw(post, model)
    alpha = lo + (1 - lo) * (0.02 + 0.96 * frac)
    Y = post.M_star + 2 * rng.standard_normal(pn)
    pred = predictive_niw(post, model, alpha)
    ev = bf_unknown_v(Y, post, model, alpha)
    assert ev.log_H == pytest.approx(pred.logpdf_null(Y) - pred.logpdf_alt(Y), rel=1e-8, abs=1e-8)
    curve = UnknownVCurve(Y, post, model)
    assert curve.log_h(alpha) == pytest.approx(ev.log_H, rel=1e-8, abs=1e-8)


def test_kappa_is_bf_at_predictive_mean():
    rng = np.random.default_rng(1)
    model, post, _ = known_v_setup(rng, 3, 2)
    assert bf_known_v(post.M_star, post, model, 0.4).log_H == pytest.approx(log_kappa_known_v(post, model, 0.4))
    nm, npost, _ = niw_setup(rng, 3, 2)
    a = 0.5 * (1 + alpha_low_niw(npost, nm))
    assert bf_unknown_v(npost.M_star, npost, nm, a).log_H == pytest.approx(log_kappa_unknown_v(npost, nm, a))


def test_bf_equals_one_at_alpha_one():
    rng = np.random.default_rng(2)
    model, post, _ = known_v_setup(rng, 2, 2)
    Y = rng.standard_normal((2, 2))
    assert bf_known_v(Y, post, model, 1.0).H == 1.0
    nm, npost, _ = niw_setup(rng, 2, 2)
    assert bf_unknown_v(Y, npost, nm, 1.0).H == 1.0


@pytest.mark.parametrize("alpha", [0.05, 0.3, 0.8])
def test_derivatives_match_finite_differences(alpha):
    rng = np.random.default_rng(3)
    model, post, _ = known_v_setup(rng, 3, 2)
    Y = post.M_star + 3 * rng.standard_normal((3, 2))
    e = 1e-6 * alpha
    fd = (bf_known_v(Y, post, model, alpha + e).H - bf_known_v(Y, post, model, alpha - e).H) / (2 * e)
    assert bf_derivative_known_v(Y, post, model, alpha) == pytest.approx(fd, rel=1e-5)
    curve = KnownVCurve(Y, post, model)
    assert curve.dlog_h(alpha) == pytest.approx(fd / bf_known_v(Y, post, model, alpha).H, rel=1e-5)

    nm, npost, _ = niw_setup(rng, 3, 2)
    a = alpha_low_niw(npost, nm) + (1 - alpha_low_niw(npost, nm)) * alpha
    Y = npost.M_star + 3 * rng.standard_normal((3, 2))
    e = 1e-6 * a
    fd = (bf_unknown_v(Y, npost, nm, a + e).H - bf_unknown_v(Y, npost, nm, a - e).H) / (2 * e)
    assert bf_derivative_unknown_v(Y, npost, nm, a) == pytest.approx(fd, rel=1e-5)


def test_sigma_h_inverts_precision_difference():
    rng = np.random.default_rng(4)
    model, post, _ = known_v_setup(rng, 4, 2)
    a = 0.35
    Sd = model.Sigma_L + post.Sigma_star
    SA = model.Sigma_L + post.Sigma_star / a
    ref = np.linalg.inv(np.linalg.inv(Sd) - np.linalg.inv(SA))
    np.testing.assert_allclose(sigma_H(post, model, a), ref, rtol=1e-8)


def test_norm_const_known_v_matches_powered_density_integral():
    # C(alpha) = 1 / int f^alpha; for a Gaussian, int N^alpha = alpha^{-d/2} (2 pi)^{(1-alpha)d/2} |S|^{(1-alpha)/2}
    rng = np.random.default_rng(5)
    model, post, _ = known_v_setup(rng, 2, 3)
    a = 0.6
    d = 6
    S = np.kron(model.V, post.Sigma_star)
    log_int = -0.5 * d * np.log(a) + 0.5 * (1 - a) * d * np.log(2 * np.pi) + 0.5 * (1 - a) * np.linalg.slogdet(S)[1]
    assert norm_const_known_v(post, model, a) == pytest.approx(-log_int, rel=1e-10)


@pytest.mark.parametrize("a", [0.7, 0.9])
def test_norm_const_unknown_v_by_quadrature_in_one_dimension(a):
    # p = n = 1: integrate the Gaussian factor of f^alpha analytically, then v on a log grid
    from scipy import integrate
    from matbf.core import NIWModel
    from matbf.conjugate import update_niw
    from matbf.matdist import InvWishartParams, invwishart_logpdf
    model = NIWModel(np.zeros((1, 1)), np.eye(1), 2.0, 1.0, np.eye(1) * 1.5, 4.0)
    post = update_niw(model, np.array([[[0.3]], [[-0.8]]]))
    ks = post.k_star
    law = InvWishartParams(post.Psi_star, post.m_star)

    def g(lv):
        v = np.exp(lv)
        l = a * invwishart_logpdf(np.array([[v]]), law) - 0.5 * np.log(a) + 0.5 * (1 - a) * np.log(2 * np.pi * v / ks)
        return np.exp(l) * v

    val, _ = integrate.quad(g, -30, 30, limit=500, epsabs=1e-13)
    assert norm_const_unknown_v(post, model, a) == pytest.approx(-np.log(val), abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 50), st.integers(1, 50), st.floats(0.01, 0.99), st.floats(-5, 5),
       st.floats(0.1, 5), st.integers(0, 10_000))
def test_scalar_matrix_path_matches_univariate_closed_form(phi, t, alpha, y, sigma, seed):
    rng = np.random.default_rng(seed)
    ys = rng.normal(0, sigma, t - 1)
    model = KnownVModel(np.zeros((1, 1)), np.array([[sigma ** 2]]), np.eye(1), phi)
    post = update_known_v(model, ys.reshape(-1, 1, 1))
    m_star = post.M_star[0, 0]
    H, kap = univ_bf_closed_form(y, m_star, sigma, phi, t, alpha)
    ev = bf_known_v(np.array([[y]]), post, model, alpha)
    assert ev.log_H == pytest.approx(np.log(H), rel=1e-10, abs=1e-12)
    assert ev.log_kappa == pytest.approx(np.log(kap), rel=1e-10, abs=1e-12)


def test_ellipsoid_membership_matches_bf_threshold():
    rng = np.random.default_rng(9)
    model, post, _ = known_v_setup(rng, 3, 2)
    a, h0 = 0.3, 0.9 * kappa_known_v(post, model, 0.3)
    E = acceptance_ellipsoid(post, model, a, h0)
    for _ in range(500):
        Y = post.M_star + rng.standard_normal((3, 2)) * rng.uniform(0.1, 3)
        inside = bf_known_v(Y, post, model, a).H >= h0
        assert E.contains(Y, tol=1e-9) == inside or abs(E.quad_form(Y) - E.radius_sq) < 1e-9
    # the longest semi-axis endpoint lies on the boundary
    xi, length, (i, j) = E.axes[0]
    assert length == pytest.approx(2 * np.sqrt(E.radius_sq * xi))


def test_ellipsoid_rejects_h0_above_kappa():
    rng = np.random.default_rng(10)
    model, post, _ = known_v_setup(rng, 2, 2)
    with pytest.raises(DomainError):
        acceptance_ellipsoid(post, model, 0.5, 1.01 * kappa_known_v(post, model, 0.5))


def test_univariate_interval_brackets_match_bisection():
    from scipy.optimize import brentq
    m, s, phi, t, a = 0.4, 1.3, 5.0, 8, 0.2
    h0 = 0.8
    lo, hi = univ_acceptance_interval(m, s, phi, t, a, h0)
    f = lambda y: np.log(univ_bf_closed_form(y, m, s, phi, t, a)[0]) - np.log(h0)
    assert lo == pytest.approx(brentq(f, m - 50, m, xtol=1e-14), abs=1e-8)
    assert hi == pytest.approx(brentq(f, m, m + 50, xtol=1e-14), abs=1e-8)


def test_scalar_kappa_value_and_monotone_grid():
    model = KnownVModel(np.zeros((1, 1)), np.eye(1), np.eye(1), 1.0)
    post = update_known_v(model, np.zeros((1, 1, 1)))          # phi = 1, t = 2
    assert kappa_known_v(post, model, 0.5) == pytest.approx(np.sqrt(2.0 / 1.5), rel=1e-12)
    assert kappa_known_v(post, model, 0.5) == pytest.approx(1.1547005, abs=1e-7)
    rng = np.random.default_rng(31)
    grid = np.linspace(1e-3, 1.0, 1000)
    for _ in range(5):
        p, n = (int(v) for v in rng.integers(1, 6, 2))
        m, ps, _ = known_v_setup(rng, p, n)
        c = KnownVCurve(ps.M_star, ps, m)
        assert np.all(np.diff(c.log_kappa(grid)) <= 1e-12)


def test_derivative_relative_accuracy_on_grid():
    rng = np.random.default_rng(32)
    model, post, _ = known_v_setup(rng, 2, 3)
    Y = post.M_star + 2 * rng.standard_normal((2, 3))
    for a in np.linspace(0.1, 0.9, 9):
        e = 1e-5 * a
        fd = (bf_known_v(Y, post, model, a + e).H - bf_known_v(Y, post, model, a - e).H) / (2 * e)
        assert bf_derivative_known_v(Y, post, model, a) == pytest.approx(fd, rel=1e-6)
