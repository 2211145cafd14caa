import math

import numpy as np
import pytest
import statsmodels.api as sm
from hypothesis import given, settings, strategies as st

from qlspatial.correlation import CorrelationMatrix, CorrelationModel, build_gamma
from qlspatial.estimator import (
    DivergenceError,
    NonConvergenceError,
    SeparationError,
    chisq1_tail,
    fit,
    format_fit_kv,
    format_fit_text,
    information,
    quasi_score,
    wald_test,
)
from qlspatial.glm import build_conditional_design, theta
from qlspatial.lattice import Lattice
from qlspatial.simulate import FieldSimulator, SimulationConfig


def dense_score_information(T, beta, y, gamma_matrix):
    """Explicit V^{-1} evaluation used as the reference."""
    th = 1.0 / (1.0 + np.exp(-(T @ beta)))
    s = np.sqrt(th * (1 - th))
    V = s[:, None] * gamma_matrix * s[None, :]
    Vinv = np.linalg.inv(V)
    P = T * (th * (1 - th))[:, None]
    return P.T @ Vinv @ (y - th), P.T @ Vinv @ P


@pytest.mark.parametrize("m, n, model", [
    (2, 2, CorrelationModel(1, 0.5, 1)),
    (3, 3, CorrelationModel(1, 0.3, 1)),
    (4, 4, CorrelationModel(1, 0.7, 1)),
    (4, 4, CorrelationModel(0.6, 0.5, 1)),
    (3, 4, CorrelationModel(1, 0.5, 2)),
    (4, 4, CorrelationModel(0.9, 0.8, 2)),
])
def test_score_and_information_match_dense(m, n, model):
    rng = np.random.default_rng(m * 10 + n)
    lat = Lattice(m, n)
    gamma = build_gamma(lat, model)
    for _ in range(5):
        x = rng.integers(0, 2, lat.size)
        T = build_conditional_design(x)
        beta = rng.normal(0, 0.7, 2)
        y = rng.integers(0, 2, lat.size).astype(float)
        U, I = dense_score_information(T, beta, y, gamma.gamma)
        assert np.max(np.abs(quasi_score(T, beta, y, gamma) - U)) <= 1e-12
        assert np.max(np.abs(information(T, beta, gamma) - I)) <= 1e-12


def test_intercept_only_identity_score():
    y = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1.0])
    T = np.ones((9, 1))
    U = quasi_score(T, np.zeros(1), y, CorrelationMatrix.identity(9))
    assert U[0] == pytest.approx(np.sum(y - 0.5), abs=1e-13)
    assert information(T, np.zeros(1), CorrelationMatrix.identity(9))[0, 0] == pytest.approx(9 / 4)


def test_information_at_zero_beta():
    N = 16
    x = np.array([0, 1] * 8)
    T = build_conditional_design(x)
    I = information(T, np.zeros(2), CorrelationMatrix.identity(N))
    assert np.allclose(I, [[N / 4, 2.0], [2.0, 2.0]])


@pytest.mark.parametrize("seed", range(5))
def test_identity_fit_matches_logistic_regression(seed):
    rng = np.random.default_rng(seed)
    N = 120
    x = rng.integers(0, 2, N)
    T = build_conditional_design(x)
    y = (rng.random(N) < theta(T, np.array([-0.3, 0.8]))).astype(float)
    res = fit(T, y, CorrelationMatrix.identity(N))
    ref = sm.GLM(y, T, family=sm.families.Binomial()).fit(tol=1e-12)
    assert res.converged
    assert np.max(np.abs(res.beta_hat - ref.params)) <= 1e-6
    assert np.max(np.abs(res.cov_hat - ref.cov_params())) <= 1e-6


def test_identity_fit_closed_form():
    # saturated model: beta0 = logit of class-0 rate, beta1 = log odds ratio
    x = np.array([0] * 10 + [1] * 10)
    y = np.array([1] * 4 + [0] * 6 + [1] * 7 + [0] * 3, dtype=float)
    res = fit(build_conditional_design(x), y, CorrelationMatrix.identity(20))
    assert res.beta_hat[0] == pytest.approx(math.log(4 / 6), abs=1e-9)
    assert res.beta_hat[1] == pytest.approx(math.log(7 / 3) - math.log(4 / 6), abs=1e-9)
    assert res.cov_hat[1, 1] == pytest.approx(1 / 4 + 1 / 6 + 1 / 7 + 1 / 3, abs=1e-9)


def test_fit_correlated_root_and_convergence():
    cfg = SimulationConfig(lattice=Lattice(8, 8), correlation=CorrelationModel(1, 0.4, 2), seed=4)
    sim = FieldSimulator(cfg)
    y = sim.field(0).y
    res = fit(cfg.design, y, cfg.gamma)
    assert res.converged
    assert np.max(np.abs(quasi_score(cfg.design, res.beta_hat, y, cfg.gamma))) <= 1e-8
    assert np.allclose(res.cov_hat, np.linalg.inv(information(cfg.design, res.beta_hat, cfg.gamma)))
    norms = [s.score_norm for s in res.trace]
    assert all(b <= a for a, b in zip(norms, norms[1:]))


def test_fit_from_zero_start_matches_default_start():
    cfg = SimulationConfig(lattice=Lattice(6, 6), correlation=CorrelationModel(1, 0.5, 1), seed=2)
    y = FieldSimulator(cfg.with_(correlation=CorrelationModel(1, 0.2, 1))).field(1).y
    a = fit(cfg.design, y, cfg.gamma)
    b = fit(cfg.design, y, cfg.gamma, beta_init=np.zeros(2), damping=True)
    assert np.allclose(a.beta_hat, b.beta_hat, atol=1e-8)


def test_constant_response_is_separation():
    T = build_conditional_design([0, 1] * 8)
    for value in (0.0, 1.0):
        with pytest.raises(DivergenceError):
            fit(T, np.full(16, value), CorrelationMatrix.identity(16))
    y = np.array([1, 1] * 8, dtype=float)
    y[::2] = [0, 1, 0, 1, 0, 1, 0, 1]
    with pytest.raises(SeparationError, match="covariate 1"):
        fit(T, y, CorrelationMatrix.identity(16))


def test_quasi_separation_diverges():
    # with two covariates no single class is constant but the data are separable
    x1 = np.array([0, 0, 1, 1, 0, 0, 1, 1])
    x2 = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    T = np.column_stack([np.ones(8), x1, x2])
    y = ((x1 + x2) >= 1).astype(float)
    with pytest.raises(DivergenceError) as info:
        fit(T, y, CorrelationMatrix.identity(8), max_iter=200)
    assert info.value.trace


def test_non_convergence_reports_trace():
    x = np.array([0, 1] * 8)
    y = np.array([1, 0, 0, 1, 1, 1, 0, 1] * 2, dtype=float)
    with pytest.raises(NonConvergenceError) as info:
        fit(build_conditional_design(x), y, CorrelationMatrix.identity(16), tol=1e-30, max_iter=3)
    assert len(info.value.trace) == 4


def test_input_validation():
    T = build_conditional_design([0, 1, 0, 1])
    with pytest.raises(ValueError):
        fit(T, np.array([0, 1, 2, 0.0]), CorrelationMatrix.identity(4))
    with pytest.raises(ValueError):
        fit(T, np.array([0, 1, 0.0]), CorrelationMatrix.identity(4))


def test_information_grows_with_sites():
    model = CorrelationModel(1, math.exp(-1 / 1.091), 2)
    beta = np.array([-0.34, -0.26])
    small, big = Lattice(12, 12), Lattice(12, 24)
    x = np.random.default_rng(0).integers(0, 2, small.size)
    I1 = information(build_conditional_design(x), beta, build_gamma(small, model))
    I2 = information(build_conditional_design(np.tile(x, 2)), beta, build_gamma(big, model))
    ratio = np.diag(I2) / np.diag(I1)
    assert np.all((ratio >= 1.6) & (ratio <= 2.4))


def test_score_variance_at_truth_matches_information():
    cfg = SimulationConfig(lattice=Lattice(8, 8), correlation=CorrelationModel(1, 0.3, 2),
                           seed=11, replicates=1500)
    sim = FieldSimulator(cfg)
    beta = np.asarray(cfg.beta)
    scores = np.array([quasi_score(cfg.design, beta, y, cfg.gamma) for y in sim.fields()])
    I = information(cfg.design, beta, cfg.gamma)
    se = np.sqrt(np.diag(I) / len(scores))
    assert np.all(np.abs(scores.mean(axis=0)) <= 4 * se)
    emp = np.cov(scores.T)
    assert np.all(np.abs(np.diag(emp) / np.diag(I) - 1) <= 0.15)


def test_chisq1_tail_values():
    # erfc(sqrt(x/2)) evaluated with mpmath at 30 digits
    assert chisq1_tail(6.76) == pytest.approx(0.0093223760474375, abs=1e-14)
    assert chisq1_tail(3.841459) == pytest.approx(0.0499999946531958, abs=1e-14)
    assert chisq1_tail(0.0) == 1.0
    with pytest.raises(ValueError):
        chisq1_tail(-1.0)


@settings(max_examples=50)
@given(st.floats(0, 200))
def test_chisq1_tail_matches_scipy(x):
    from scipy.stats import chi2
    assert chisq1_tail(x) == pytest.approx(chi2.sf(x, 1), rel=1e-9, abs=1e-300)


def test_wald_test_and_reports():
    x = np.array([0] * 10 + [1] * 10)
    y = np.array([1] * 4 + [0] * 6 + [1] * 7 + [0] * 3, dtype=float)
    res = fit(build_conditional_design(x), y, CorrelationMatrix.identity(20))
    w = wald_test(res, 1)
    assert w.statistic == pytest.approx(res.beta_hat[1] ** 2 / res.cov_hat[1, 1])
    assert w.p_value == pytest.approx(chisq1_tail(w.statistic))
    text = format_fit_text(res, ["intercept", "x"], w)
    assert "Wald test x = 0" in text and "iteration trace" in text
    kv = dict(line.split("=", 1) for line in format_fit_kv(res, ["intercept", "x"], w).splitlines())
    assert float(kv["x"]) == res.beta_hat[1]
    assert float(kv["wald_p_value"]) == w.p_value
    assert kv["converged"] == "true"
