import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from matbf.bayesfactor import bf_known_v
from matbf.bfdist import (BFDistribution, CalibrationResult, ConvergenceError, Decision, bf_cdf,
                          bf_distribution, bf_pdf, calibrate, calibrate_production, calibrate_unknown_v,
                          decide, decide_log, jeffreys_label, production_distribution,
                          production_log_kappa, production_scales, ruben_coeffs, univ_bf_cdf)
from matbf.conjugate import update_known_v
from matbf.core import DomainError, KnownVModel

from _helpers import known_v_setup, spd


def imhof_sf(x, lam, dof, nc):
    """P(sum lam_j chi2_{dof_j}(nc_j) > x) by numerical inversion of the characteristic function."""
    lam, dof, nc = map(np.asarray, (lam, dof, nc))

    def f(u):
        t = lam * u
        theta = 0.5 * np.sum(dof * np.arctan(t) + nc * t / (1 + t * t)) - 0.5 * x * u
        rho = np.prod((1 + t * t) ** (dof / 4)) * np.exp(0.5 * np.sum(nc * t * t / (1 + t * t)))
        return np.sin(theta) / (u * rho)

    val = integrate.quad(f, 0, np.inf, limit=1000, epsabs=1e-12)[0]
    return 0.5 + val / np.pi


@pytest.mark.parametrize("lam,U,n", [
    ([0.5, 1.0, 2.0], [0, 0, 0], 1),
    ([0.3, 0.9], [0.4, 1.5], 2),
    ([1.0, 1.0, 4.0, 0.2], [0.0, 2.0, 0.1, 0.0], 3),
])
def test_ruben_series_matches_imhof(lam, U, n):
    s = ruben_coeffs(lam, U, n)
    for x in [0.5, 2.0, 6.0, 15.0]:
        ref = imhof_sf(x, lam, np.full(len(lam), n), 2 * np.asarray(U, float))
        # the oscillatory inversion integral itself is only good to about 1e-8
        assert float(s.sf(x)) == pytest.approx(ref, abs=2e-7)
    assert s.tail_bound < 1e-12


def test_ruben_single_term_matches_ncx2():
    s = ruben_coeffs([1.7], [0.8], 3)
    x = np.linspace(0.1, 20, 7)
    np.testing.assert_allclose(s.sf(x), stats.ncx2.sf(x / 1.7, 3, 1.6), atol=1e-10)
    np.testing.assert_allclose(s.pdf(x), stats.ncx2.pdf(x / 1.7, 3, 1.6) / 1.7, atol=1e-10)


def test_ruben_pdf_integrates_to_one_and_differentiates_cdf():
    s = ruben_coeffs([0.2, 0.7, 3.0], [0.5, 0.0, 1.0], 2)
    val = integrate.quad(lambda x: float(s.pdf(x)), 0, np.inf, limit=500)[0]
    assert val == pytest.approx(1.0, abs=1e-9)
    e = 1e-5
    assert float(s.pdf(4.0)) == pytest.approx(float(s.cdf(4.0 + e) - s.cdf(4.0 - e)) / (2 * e), rel=1e-6)


def test_ruben_underflowing_leading_weight_is_handled():
    # c0 ~ exp(-857) underflows double precision without rescaling
    lam = np.r_[np.full(50, 0.1), np.full(50, 1.0)]
    s = ruben_coeffs(lam, np.full(100, 8.0), 1)
    x = np.sum(lam * 17.0)
    rng = np.random.default_rng(0)
    Q = (lam * rng.noncentral_chisquare(1, 16.0, size=(40_000, 100))).sum(axis=1)
    assert float(s.sf(x)) == pytest.approx(np.mean(Q >= x), abs=0.01)


def test_ruben_convergence_error_and_domain():
    with pytest.raises(ConvergenceError):
        ruben_coeffs([1e-4, 1.0], None, 5, max_terms=5)
    with pytest.raises(DomainError):
        ruben_coeffs([0.0, 1.0])
    with pytest.raises(DomainError):
        ruben_coeffs([1.0], [-1.0])


def test_collapsed_and_series_paths_agree():
    d_c = BFDistribution(0.3, np.full(4, 0.6), np.zeros(4), 3)
    assert d_c.collapsed
    d_s = BFDistribution(0.3, np.full(4, 0.6), np.zeros(4), 3, ruben_coeffs(np.full(4, 0.6), n=3, lambda_scale=0.5))
    h = np.array([0.05, 0.3, 0.9, 1.3])
    np.testing.assert_allclose(d_c.cdf(h), d_s.series.sf(-2 * (np.log(h) - 0.3)), atol=1e-10)


@pytest.mark.parametrize("p,n", [(1, 1), (3, 2)])
def test_bf_cdf_matches_simulation(p, n):
    rng = np.random.default_rng(p * 10 + n)
    model, post, _ = known_v_setup(rng, p, n, production=False)
    # general Sigma* so the Ruben path is exercised
    post = type(post)(post.M_star, spd(rng, p) * 0.3, post.T)
    a = 0.3
    draws = 20_000
    Sd = model.Sigma_L + post.Sigma_star
    Y = post.M_star + np.linalg.cholesky(Sd) @ rng.standard_normal((draws, p, n)) @ np.linalg.cholesky(model.V).T
    H = np.array([bf_known_v(y, post, model, a).H for y in Y])
    d = bf_distribution(post, model, a)
    grid = np.quantile(H, np.linspace(0.01, 0.99, 60))
    emp = np.searchsorted(np.sort(H), grid, side="right") / draws
    assert np.max(np.abs(d.cdf(grid) - emp)) < 0.015


def test_bf_pdf_is_derivative_of_cdf():
    rng = np.random.default_rng(2)
    model, post, _ = known_v_setup(rng, 3, 2)
    post = type(post)(post.M_star, spd(rng, 3) * 0.3, post.T)
    h, e = 0.5, 1e-6
    fd = (bf_cdf(h + e, post, model, 0.4) - bf_cdf(h - e, post, model, 0.4)) / (2 * e)
    assert float(bf_pdf(h, post, model, 0.4)) == pytest.approx(float(fd), rel=1e-5)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 30), st.integers(1, 30), st.floats(0.02, 0.98), st.floats(-3, 3), st.floats(0.01, 0.99))
def test_scalar_cdf_closed_form_matches_matrix_path(phi, t, a, shift, q):
    sigma, m = 1.3, 0.2
    model = KnownVModel(np.full((1, 1), m), np.array([[sigma ** 2]]), np.eye(1), phi + t - 1)
    post = update_known_v(model, np.zeros((0, 1, 1)))
    theta = m + shift
    d = bf_distribution(post, model, a, M_tilde=np.array([[theta]]), Sigma_tilde=np.array([[sigma ** 2]]))
    h = np.exp(d.log_kappa) * q
    # the scalar form takes phi with t: k = phi + t - 1
    ref = univ_bf_cdf(h, theta, m, sigma, phi, t, a)
    assert float(d.cdf(h)) == pytest.approx(float(ref), abs=1e-10)


def test_production_distribution_matches_general_path_and_scale_invariance():
    rng = np.random.default_rng(3)
    p, n, k, a = 3, 2, 12.0, 0.4
    for SL in (np.eye(p), spd(rng, p) * 7.0):
        model = KnownVModel(np.zeros((p, n)), SL, spd(rng, n), 1.0)
        from matbf.core import PosteriorKnownV
        post = PosteriorKnownV(np.zeros((p, n)), SL / k, 5)
        g = bf_distribution(post, model, a)
        g1 = bf_distribution(post, model, a, "alternative")
        pr = production_distribution(p, n, k, a)
        pr1 = production_distribution(p, n, k, a, "alternative")
        assert g.log_kappa == pytest.approx(production_log_kappa(p, n, k, a))
        np.testing.assert_allclose(g.eigenvalues, production_scales(k, a)[0], rtol=1e-9)
        np.testing.assert_allclose(g1.eigenvalues, production_scales(k, a)[1], rtol=1e-9)
        h = np.array([0.1, 0.5, 1.0])
        np.testing.assert_allclose(g.cdf(h), pr.cdf(h), atol=1e-10)
        np.testing.assert_allclose(g1.cdf(h), pr1.cdf(h), atol=1e-10)


def test_calibration_size_identity_and_symmetric_interval():
    cal = calibrate_production(3, 2, 20.0, 0.05, 0.5)
    assert cal.h_upper == pytest.approx(2 - cal.h_lower)
    d0 = production_distribution(3, 2, 20.0, cal.alpha_star)
    assert float(d0.cdf(cal.h_lower)) == pytest.approx(0.05, abs=1e-8)
    assert cal.size_at_h_lower == pytest.approx(0.05, abs=1e-8)
    if cal.attained:
        assert cal.achieved_power == pytest.approx(0.5, abs=1e-6)


def test_calibration_reports_unattained_power():
    cal = calibrate_production(30, 10, 158.0, 0.01, 0.8)
    assert not cal.attained
    assert cal.achieved_power < 0.8
    assert cal.scan["power"][int(np.nanargmax(cal.scan["power"]))] == pytest.approx(cal.achieved_power, abs=1e-2)


def test_general_calibration_dispatches_to_production_when_proportional():
    rng = np.random.default_rng(4)
    model, post, _ = known_v_setup(rng, 2, 2, phi=3.0, T=4)
    a = calibrate(post, model, 0.05, 0.5)
    b = calibrate_production(2, 2, 7.0, 0.05, 0.5)
    assert a.alpha_star == pytest.approx(b.alpha_star)
    assert a.method == "exact"


def test_calibration_result_roundtrip():
    cal = calibrate_production(2, 2, 10.0, 0.05, 0.5, n_scan=16)
    back = CalibrationResult.from_dict(cal.to_dict())
    assert back == cal


def test_unknown_v_calibration_size():
    cal = calibrate_unknown_v(2, 2, 20.0, 30.0, 0.05, 0.5, n_scan=12, draws=4000, seed=1)
    assert cal.method == "monte_carlo"
    assert cal.size_at_h_lower == pytest.approx(0.05, abs=0.003)
    with pytest.raises(DomainError):
        calibrate_unknown_v(2, 2, 20.0, 30.0, 0.05, 0.5, alpha_grid=(0.1, 0.9))


def test_decisions_and_labels():
    cal = CalibrationResult(0.5, 0.8, 1.2, 0.05, 0.8, 0.8)
    assert decide(0.5, cal)[0] is Decision.reject_null
    assert decide(1.0, cal)[0] is Decision.inconclusive
    assert decide(1.5, cal)[0] is Decision.accept_null
    assert decide_log(-800.0, cal) == (Decision.reject_null, "decisive")
    assert jeffreys_label(2.0) == "negative"
    assert jeffreys_label(0.5) == "barely_worth_mentioning"
    assert jeffreys_label(0.2) == "substantial"
    assert jeffreys_label(0.05) == "strong"
    assert jeffreys_label(0.02) == "very_strong"
    assert jeffreys_label(0.001) == "decisive"
    with pytest.raises(DomainError):
        decide(0.0, cal)


def test_scalar_distribution_hand_values():
    d = BFDistribution(np.log(1.2), np.array([1.0]), np.zeros(1), 1)
    assert float(d.cdf(1.2 * np.exp(-3.841459 / 2))) == pytest.approx(0.05, abs=1e-7)
    # theta = m*: P(H <= h) = 2 Phi(-1.959964) when s equals 1.959964
    phi, t, a, sigma = 4.0, 3, 0.3, 1.0
    k = phi + t - 1
    ratio = (a * k + 1) * (k + 1) / (k * (1 - a))
    log_kap = 0.5 * np.log((a * k + 1) / (a * (k + 1)))
    h = np.exp(log_kap - 3.841459 / (2 * ratio))
    assert float(univ_bf_cdf(h, 0.0, 0.0, sigma, phi, t, a)) == pytest.approx(0.05, abs=1e-6)


def test_calibration_independent_of_sigma_l():
    rng = np.random.default_rng(51)
    out = []
    for _ in range(2):
        SL = spd(rng, 3) * rng.uniform(0.1, 10)
        model = KnownVModel(np.zeros((3, 2)), SL, spd(rng, 2), 10.0)
        post = update_known_v(model, rng.standard_normal((10, 3, 2)))
        out.append(calibrate(post, model, 0.05, 0.2))
    assert out[0].alpha_star == pytest.approx(out[1].alpha_star, abs=1e-8)
    assert out[0].h_lower == pytest.approx(out[1].h_lower, abs=1e-8)
