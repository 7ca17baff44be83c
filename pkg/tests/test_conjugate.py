import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from matbf.conjugate import (RunningMoments, alpha_low_niw, predictive_known_v, predictive_niw,
                             update_known_v, update_known_v_generic, update_niw)
from matbf.core import DomainError, KnownVModel

from _helpers import known_v_setup, niw_setup, spd


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 5), st.integers(0, 10_000))
def test_known_v_update_matches_dense_kronecker_path(p, n, T, seed):
    rng = np.random.default_rng(seed)
    model, post, data = known_v_setup(rng, p, n, T=T)
    ref = update_known_v_generic(model, data)
    np.testing.assert_allclose(post.M_star, ref.M_star, rtol=1e-9, atol=1e-10)
    np.testing.assert_allclose(post.Sigma_star, ref.Sigma_star, rtol=1e-9, atol=1e-12)


def test_known_v_update_with_no_data_returns_prior():
    model = KnownVModel(np.ones((2, 2)), np.eye(2), np.eye(2), 4.0)
    post = update_known_v(model, np.zeros((0, 2, 2)))
    np.testing.assert_array_equal(post.M_star, model.M)
    np.testing.assert_allclose(post.Sigma_star, np.eye(2) / 4.0)


def test_sequential_known_v_updates_compose():
    rng = np.random.default_rng(3)
    model, post, data = known_v_setup(rng, 3, 2, phi=2.0, T=5)
    first = update_known_v(model, data[:2])
    # the posterior after 2 points acts as a prior with phi + 2
    m2 = KnownVModel(first.M_star, model.Sigma_L, model.V, model.phi + 2)
    second = update_known_v(m2, data[2:])
    np.testing.assert_allclose(second.M_star, post.M_star, rtol=1e-12)
    np.testing.assert_allclose(second.Sigma_star, post.Sigma_star, rtol=1e-12)


def test_running_moments_match_batch():
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((20, 3, 2))
    S = spd(rng, 3)
    rm = RunningMoments(3, 2, S).extend(Y)
    D = Y - Y.mean(axis=0)
    ref = sum(d.T @ np.linalg.solve(S, d) for d in D)
    np.testing.assert_allclose(rm.mean, Y.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(rm.scatter, ref, rtol=1e-10)


def test_niw_update_sequential_equals_batch():
    rng = np.random.default_rng(6)
    model, post, data = niw_setup(rng, 3, 2, T=4)
    from matbf.core import NIWModel
    a = update_niw(model, data[:1])
    m1 = NIWModel(a.M_star, model.Sigma_L, a.k_star, 1.0, a.Psi_star, a.m_star)
    b = update_niw(m1, data[1:])
    np.testing.assert_allclose(b.Psi_star, post.Psi_star, rtol=1e-10)
    np.testing.assert_allclose(b.M_star, post.M_star, rtol=1e-10)
    assert b.k_star == pytest.approx(post.k_star) and b.m_star == post.m_star


def test_known_v_predictives_match_vec_normal():
    rng = np.random.default_rng(7)
    model, post, _ = known_v_setup(rng, 3, 2)
    Y = rng.standard_normal((3, 2))
    pred = predictive_known_v(post, model, 0.3)
    y = Y.flatten(order="F")
    m = post.M_star.flatten(order="F")
    S0 = model.Sigma_L + post.Sigma_star
    S1 = model.Sigma_L + post.Sigma_star / 0.3
    assert pred.logpdf_null(Y) == pytest.approx(stats.multivariate_normal(m, np.kron(model.V, S0)).logpdf(y), rel=1e-10)
    assert pred.logpdf_alt(Y) == pytest.approx(stats.multivariate_normal(m, np.kron(model.V, S1)).logpdf(y), rel=1e-10)


def _niw_n1_oracle(Y, post, model, alpha):
    """With one column V is inverse gamma and both predictives are multivariate t."""
    p = model.p
    ms, ks, Psi = post.m_star, post.k_star, float(post.Psi_star[0, 0])
    mA = alpha * (ms + p) - p
    y, mu = Y[:, 0], post.M_star[:, 0]
    null = stats.multivariate_t(mu, Psi / (ms - 2) * (1 + 1 / ks) * model.Sigma_L, df=ms - 2).logpdf(y)
    alt = stats.multivariate_t(mu, alpha * Psi / (mA - 2) * (1 + 1 / (alpha * ks)) * model.Sigma_L,
                               df=mA - 2).logpdf(y)
    return null, alt


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.floats(0.3, 1.0), st.integers(0, 10_000))
def test_niw_predictives_match_multivariate_t_for_one_column(p, alpha, seed):
    rng = np.random.default_rng(seed)
    model, post, _ = niw_setup(rng, p, 1)
    alpha = max(alpha, alpha_low_niw(post, model) + 1e-3)
    Y = rng.standard_normal((p, 1)) * 2
    pred = predictive_niw(post, model, alpha)
    null, alt = _niw_n1_oracle(Y, post, model, alpha)
    assert pred.logpdf_null(Y) == pytest.approx(null, rel=1e-9, abs=1e-9)
    assert pred.logpdf_alt(Y) == pytest.approx(alt, rel=1e-9, abs=1e-9)


def test_niw_predictive_rejects_alpha_below_bound():
    rng = np.random.default_rng(8)
    model, post, _ = niw_setup(rng, 2, 2, T=1)
    lo = alpha_low_niw(post, model)
    assert lo == pytest.approx((2 + 4) / (post.m_star + 2))
    with pytest.raises(DomainError):
        predictive_niw(post, model, lo)


def test_niw_update_matches_scalar_normal_inverse_gamma():
    from matbf.core import NIWModel
    ys = np.array([0.4, -1.2, 2.5, 0.9])
    s, k0, m0, Psi, m = 2.0, 1.5, 0.3, 1.2, 4.0
    post = update_niw(NIWModel(np.full((1, 1), m0), np.array([[s]]), k0, 1.0, np.array([[Psi]]), m),
                      ys.reshape(-1, 1, 1))
    T, yb = len(ys), ys.mean()
    k = k0 + T
    # NIG on y / sqrt(s): shape a0 + T/2, scale b0 + SS/2 + k0 T (ybar - m0)^2 / (2k)
    b = Psi / 2 + 0.5 * np.sum((ys - yb) ** 2) / s + k0 * T * (yb - m0) ** 2 / (2 * k * s)
    assert post.k_star == k
    assert post.M_star[0, 0] == pytest.approx((k0 * m0 + T * yb) / k)
    assert (post.m_star - 2) / 2 == pytest.approx((m - 2) / 2 + T / 2)
    assert post.Psi_star[0, 0] / 2 == pytest.approx(b, rel=1e-12)


def _mc_mean(logs):
    w = np.exp(logs - logs.max())
    return np.log(w.mean()) + logs.max(), w.std() / np.sqrt(len(w)) / w.mean()


def test_known_v_predictive_by_monte_carlo_marginalization():
    from matbf.matdist import MatNormParams, matnorm_logpdf
    rng = np.random.default_rng(21)
    model, post, _ = known_v_setup(rng, 2, 2)
    Y = post.M_star + rng.standard_normal((2, 2))
    B = post.M_star + np.linalg.cholesky(post.Sigma_star) @ rng.standard_normal((100_000, 2, 2)) @ np.linalg.cholesky(model.V).T
    Li = np.linalg.inv(np.linalg.cholesky(model.Sigma_L))
    Lv = np.linalg.inv(np.linalg.cholesky(model.V))
    W = Li @ (Y - B) @ Lv.T
    const = matnorm_logpdf(np.zeros((2, 2)), MatNormParams(np.zeros((2, 2)), model.Sigma_L, model.V))
    est, rel_se = _mc_mean(const - 0.5 * np.sum(W * W, axis=(1, 2)))
    exact = predictive_known_v(post, model, 0.5).logpdf_null(Y)
    assert abs(np.exp(est - exact) - 1) < 3 * rel_se + 1e-12


def test_alternative_equals_hierarchical_perturbation_of_posterior():
    # B | M~ ~ MN(M~, Sigma*, V), M~ ~ MN(M*, Sigma*(1/alpha - 1), V): Y | M~ ~ MN(M~, Sigma_L + Sigma*, V)
    from matbf.matdist import MatNormParams, matnorm_logpdf
    rng = np.random.default_rng(22)
    model, post, _ = known_v_setup(rng, 2, 2)
    a = 0.4
    Y = post.M_star + 1.5 * rng.standard_normal((2, 2))
    Lm = np.linalg.cholesky(post.Sigma_star * (1 / a - 1))
    Mt = post.M_star + Lm @ rng.standard_normal((100_000, 2, 2)) @ np.linalg.cholesky(model.V).T
    S = model.Sigma_L + post.Sigma_star
    Li = np.linalg.inv(np.linalg.cholesky(S))
    Lv = np.linalg.inv(np.linalg.cholesky(model.V))
    W = Li @ (Y - Mt) @ Lv.T
    const = matnorm_logpdf(np.zeros((2, 2)), MatNormParams(np.zeros((2, 2)), S, model.V))
    est, rel_se = _mc_mean(const - 0.5 * np.sum(W * W, axis=(1, 2)))
    exact = predictive_known_v(post, model, a).logpdf_alt(Y)
    assert abs(np.exp(est - exact) - 1) < 3 * rel_se + 1e-12


def test_niw_null_predictive_by_monte_carlo():
    rng = np.random.default_rng(23)
    model, post, _ = niw_setup(rng, 1, 1, T=3)
    Y = post.M_star + 1.0
    from matbf.matdist import InvWishartParams, invwishart_sample
    V = invwishart_sample(InvWishartParams(post.Psi_star, post.m_star), 24, count=100_000)[:, 0, 0]
    s = float(model.Sigma_L[0, 0])
    B = post.M_star[0, 0] + np.sqrt(s * V / post.k_star) * rng.standard_normal(V.size)
    logs = stats.norm.logpdf(Y[0, 0], B, np.sqrt(s * V))
    est, rel_se = _mc_mean(logs)
    exact = predictive_niw(post, model, 0.9).logpdf_null(Y)
    assert abs(np.exp(est - exact) - 1) < 3 * rel_se + 1e-12
