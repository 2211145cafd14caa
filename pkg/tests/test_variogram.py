import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qlspatial.lattice import Lattice
from qlspatial.variogram import (
    DegenerateVariogramError,
    ExponentialVariogramFit,
    Semivariogram,
    correlation_from_fit,
    empirical_semivariogram,
    fit_exponential,
    golden_section,
)

SILL, RANGE = 0.246, 1.091
LAGS = np.array([1.0, math.sqrt(2), 2.0, math.sqrt(5), math.sqrt(8), 3.0, math.sqrt(10), math.sqrt(13), 4.0])
COUNTS = np.array([480, 450, 448, 840, 392, 416, 780, 728, 384])


def synthetic(gamma, counts=COUNTS):
    return Semivariogram(LAGS, np.asarray(gamma, float), np.asarray(counts), 0.5, 4.0)


def brute_semivariogram(y, lat, bw, max_lag):
    bins = {}
    for i in range(1, lat.size + 1):
        for j in range(i + 1, lat.size + 1):
            d = lat.distance(i, j, 2)
            if d <= max_lag + 1e-12:
                k = int(np.rint(d / bw))
                s = bins.setdefault(k, [0.0, 0, 0.0])
                s[0] += (y[i - 1] - y[j - 1]) ** 2
                s[1] += 1
                s[2] += d
    keys = sorted(k for k in bins if k > 0)
    return (np.array([bins[k][2] / bins[k][1] for k in keys]),
            np.array([bins[k][0] / (2 * bins[k][1]) for k in keys]),
            np.array([bins[k][1] for k in keys]))


@pytest.mark.parametrize("seed", range(3))
def test_matches_pairwise_loop(seed):
    lat = Lattice(7, 6)
    y = np.random.default_rng(seed).integers(0, 2, lat.size).astype(float)
    sv = empirical_semivariogram(y, lat, bin_width=0.5)
    h, g, c = brute_semivariogram(y, lat, 0.5, 3.0)
    assert np.allclose(sv.lags, h) and np.allclose(sv.gamma, g) and np.array_equal(sv.counts, c)


def test_constant_field_is_zero_and_flagged():
    lat = Lattice(6, 6)
    sv = empirical_semivariogram(np.ones(lat.size), lat)
    assert sv.constant_field and np.all(sv.gamma == 0)
    with pytest.raises(DegenerateVariogramError, match="no spatial variation"):
        fit_exponential(sv)


def test_checkerboard_lag_one():
    lat = Lattice(8, 8)
    r, c = lat.coords.T
    sv = empirical_semivariogram(((r + c) % 2).astype(float), lat)
    assert sv.lags[0] == 1.0 and sv.gamma[0] == 0.5
    assert sv.gamma[1] == 0.0  # diagonal neighbours share a colour


def test_iid_field_near_quarter():
    lat = Lattice(30, 30)
    y = np.random.default_rng(0).integers(0, 2, lat.size)
    sv = empirical_semivariogram(y, lat, bin_width=1.0, max_lag=6)
    assert np.all(np.abs(sv.gamma - 0.25) < 0.02)


def test_bins_centered_on_multiples_of_width():
    lat = Lattice(6, 6)
    sv = empirical_semivariogram(np.arange(36) % 3, lat, bin_width=0.5)
    assert np.all(np.abs(sv.lags / 0.5 - np.rint(sv.lags / 0.5)) <= 0.5)
    assert sv.counts.sum() == sum(1 for i in range(36) for j in range(i + 1, 36)
                                  if lat.distance(i + 1, j + 1) <= 3 + 1e-12)


def test_max_lag_limits():
    lat = Lattice(4, 4)
    with pytest.raises(ValueError, match="diagonal"):
        empirical_semivariogram(np.zeros(16), lat, max_lag=5)
    with pytest.raises(ValueError):
        empirical_semivariogram(np.zeros(15), lat)


def test_csv_output(tmp_path):
    sv = synthetic(SILL * (1 - np.exp(-LAGS / RANGE)))
    lines = sv.to_csv(tmp_path / "v.csv").read_text().splitlines()
    assert lines[0] == "h,gamma_hat,count"
    assert len(lines) == len(LAGS) + 1


def test_noiseless_recovery():
    fit = fit_exponential(synthetic(SILL * (1 - np.exp(-LAGS / RANGE))))
    assert fit.sill == pytest.approx(SILL, abs=1e-6)
    assert fit.range == pytest.approx(RANGE, abs=1e-6)
    assert not fit.at_boundary
    rho = correlation_from_fit(fit).rho
    assert rho == pytest.approx(math.exp(-1 / RANGE), abs=1e-6)
    assert rho == pytest.approx(0.39988, abs=5e-6)


def noisy_recovery_errors(draws, seed=0):
    """Worst relative parameter error per draw, 5% multiplicative noise on dense bins."""
    h = np.arange(1, 51) * 0.1
    rng = np.random.default_rng(seed)
    errors = []
    for _ in range(draws):
        g = SILL * (1 - np.exp(-h / RANGE)) * (1 + rng.normal(0, 0.05, h.size))
        fit = fit_exponential(Semivariogram(h, g, np.ones(h.size, int), 0.1, 5.0))
        errors.append(max(abs(fit.sill / SILL - 1), abs(fit.range / RANGE - 1)))
    return np.array(errors)


def test_noisy_recovery():
    errors = noisy_recovery_errors(200)
    assert np.mean(errors <= 0.10) >= 0.95
    assert np.median(errors) <= 0.05


def test_weight_scaling_invariance():
    g = SILL * (1 - np.exp(-LAGS / RANGE)) * (1 + np.random.default_rng(5).normal(0, 0.05, LAGS.size))
    a, b = fit_exponential(synthetic(g)), fit_exponential(synthetic(g, COUNTS * 7))
    assert a.sill == pytest.approx(b.sill, rel=1e-9) and a.range == pytest.approx(b.range, rel=1e-9)


def test_flat_variogram_hits_boundary():
    fit = fit_exponential(synthetic(np.full(LAGS.size, 0.25)))
    assert fit.at_boundary
    assert fit.sill == pytest.approx(0.25, rel=1e-3)


def test_iid_field_fit_has_short_range():
    lat = Lattice(16, 16)
    y = np.random.default_rng(3).integers(0, 2, lat.size)
    fit = fit_exponential(empirical_semivariogram(y, lat))
    assert fit.at_boundary or fit.range < 0.5


def test_too_few_bins():
    sv = Semivariogram(LAGS[:2], np.array([0.1, 0.2]), COUNTS[:2], 0.5, 4.0)
    with pytest.raises(ValueError, match="3"):
        fit_exponential(sv)


def test_model_evaluation():
    fit = ExponentialVariogramFit(SILL, RANGE)
    assert fit(0.0) == 0.0
    assert fit(RANGE) == pytest.approx(SILL * (1 - math.exp(-1)))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.floats(0.3, 3.0))
def test_sill_is_profile_optimum(sill, rng_):
    fit = fit_exponential(synthetic(sill * (1 - np.exp(-LAGS / rng_))))
    assert fit.sill == pytest.approx(sill, rel=1e-5)
    assert fit.range == pytest.approx(rng_, rel=1e-5)
    assert fit.weighted_sse <= 1e-12


def test_correlation_conventions():
    fit = ExponentialVariogramFit(SILL, 3.0)
    lit = correlation_from_fit(fit, "literal")
    thirds = correlation_from_fit(fit, "thirds")
    assert lit.rho == pytest.approx(math.exp(-1 / 3))
    assert thirds.rho == pytest.approx(math.exp(-1))
    assert (lit.a, lit.metric) == (1.0, 2)
    assert lit.correlation(3.0) == pytest.approx(math.exp(-1))
    with pytest.raises(ValueError):
        correlation_from_fit(fit, "other")


def test_golden_section():
    assert golden_section(lambda t: (t - 1.3) ** 2, -4, 9) == pytest.approx(1.3, abs=1e-8)
    assert golden_section(lambda t: -math.sin(t), 0, 3) == pytest.approx(math.pi / 2, abs=1e-6)


@pytest.mark.parametrize("beta0", [0.0, -0.34, 1.0])
def test_sill_tracks_field_variance(beta0):
    from qlspatial.correlation import CorrelationModel
    from qlspatial.simulate import SimulationConfig, simulate_field

    cfg = SimulationConfig(lattice=Lattice(16, 16), beta=(beta0,), correlation=CorrelationModel(1, 0.4, 2), seed=7)
    th = float(cfg.theta[0])
    for rep in range(5):
        f = simulate_field(cfg, rep)
        fit = fit_exponential(empirical_semivariogram(f.y, f.lattice))
        assert 0.5 * th * (1 - th) <= fit.sill <= 1.5 * th * (1 - th)
