import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from qdhom import noise
from qdhom.noise import NoiseProcess, RfTrace


def dense_moments(process, m_max, w, n=400_001):
    """Brute-force mean and variance of the mixture on a dense detuning grid."""
    d = np.linspace(process.mu - 12 * process.sigma, process.mu + 12 * process.sigma, n)
    wts = stats.norm.pdf(d, process.mu, process.sigma)
    m = noise.mean_rate(d, m_max, w)
    mean = integrate.trapezoid(wts * m, d)
    return mean, mean + integrate.trapezoid(wts * (m - mean) ** 2, d)


def test_process_and_trace_validation():
    with pytest.raises(ValueError):
        NoiseProcess(sigma=-1.0)
    with pytest.raises(ValueError):
        NoiseProcess(sigma=1.0, corr_time_us=0.0)
    with pytest.raises(ValueError):
        RfTrace(bin_us=0.0, counts=[1, 2])
    with pytest.raises(ValueError):
        RfTrace(bin_us=1.0, counts=[1, -2])
    assert RfTrace(bin_us=1.0, counts=[1, 2, 3]).mean_rate == 2.0


# --- detuning density ---------------------------------------------------------


def test_pdf_examples():
    p = NoiseProcess(sigma=0.3)
    assert noise.detuning_pdf(p, 0.0) == pytest.approx(1 / (math.sqrt(2 * math.pi) * 0.3), rel=1e-14)
    assert noise.detuning_pdf(p, 0.7) == pytest.approx(noise.detuning_pdf(p, -0.7), rel=1e-14)
    total, _ = integrate.quad(lambda d: noise.detuning_pdf(p, d), -3.0, 3.0, epsabs=1e-13)
    assert total == pytest.approx(1.0, abs=1e-9)
    q = NoiseProcess(sigma=0.3, mu=0.5)
    assert noise.detuning_pdf(q, 0.8) / noise.detuning_pdf(q, 0.5) == pytest.approx(math.exp(-0.5), rel=1e-14)


def test_pdf_degenerate():
    with pytest.raises(ValueError):
        noise.detuning_pdf(NoiseProcess(sigma=0.0), 0.0)


def test_mean_rate_examples():
    assert noise.mean_rate(0.0, 50.0, 2.0) == pytest.approx(50.0, rel=1e-15)
    assert noise.mean_rate(1.0, 50.0, 2.0) == pytest.approx(25.0, rel=1e-15)
    assert noise.mean_rate(6.0, 37.0, 2.0) == pytest.approx(1.0, rel=1e-14)


# --- count distribution -------------------------------------------------------


def test_pmf_zero_sigma_is_poisson():
    k = np.arange(120)
    assert np.allclose(noise.intensity_pmf(NoiseProcess(), 50.0, 1.0, k), stats.poisson.pmf(k, 50.0), atol=1e-12, rtol=0)


def test_pmf_small_sigma_approaches_poisson():
    k = np.arange(120)
    p = noise.intensity_pmf(NoiseProcess(sigma=1e-6), 50.0, 1.0, k)
    assert np.max(np.abs(p - stats.poisson.pmf(k, 50.0))) < 1e-9


@pytest.mark.parametrize("m_max", [5.0, 50.0, 1000.0, 1e4])
@pytest.mark.parametrize("sigma", [0.02, 0.048, 0.2, 1.0])
def test_pmf_normalized(m_max, sigma):
    k = np.arange(int(m_max + 10 * math.sqrt(m_max)) + 1)
    assert noise.intensity_pmf(NoiseProcess(sigma=sigma), m_max, 1.0, k).sum() == pytest.approx(1.0, abs=1e-6)


def test_pmf_scalar_and_shape():
    p = NoiseProcess(sigma=0.1)
    assert isinstance(noise.intensity_pmf(p, 10.0, 1.0, 3), float)
    assert noise.intensity_pmf(p, 10.0, 1.0, np.zeros((2, 3), int)).shape == (2, 3)


def test_dispersion_matches_dense_oracle():
    p = NoiseProcess(sigma=0.048)
    mean, var = noise.pmf_moments(p, 50.0, 1.0)
    o_mean, o_var = dense_moments(p, 50.0, 1.0)
    assert mean == pytest.approx(o_mean, rel=1e-8)
    assert var / mean == pytest.approx(o_var / o_mean, rel=1e-8)
    # same ratio straight from the pmf
    k = np.arange(200)
    pk = noise.intensity_pmf(p, 50.0, 1.0, k)
    m1 = pk @ k
    assert (pk @ (k - m1) ** 2) / m1 == pytest.approx(o_var / o_mean, rel=1e-6)


def test_variance_grows_with_sigma():
    ratios = [np.divide(*noise.pmf_moments(NoiseProcess(sigma=s), 50.0, 1.0)[::-1]) for s in np.linspace(0, 0.5, 26)]
    assert ratios[0] == 1.0
    assert np.all(np.diff(ratios) > 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.005, 2.0), st.floats(-1.0, 1.0), st.floats(1.0, 2000.0))
def test_mixture_is_super_poissonian(sigma, mu, m_max):
    mean, var = noise.pmf_moments(NoiseProcess(sigma=sigma, mu=mu), m_max, 1.0)
    assert var >= mean * (1 - 1e-12)
    assert 0 < mean <= m_max


# --- traces -------------------------------------------------------------------


def test_ou_path_marginal_and_correlation():
    p = NoiseProcess(sigma=0.5, mu=0.2, corr_time_us=1000.0)
    x = noise.ou_path(400_000, 100.0, p, np.random.default_rng(3))
    assert x.mean() == pytest.approx(0.2, abs=0.03)
    assert x.std() == pytest.approx(0.5, rel=0.03)
    lag1 = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert lag1 == pytest.approx(math.exp(-0.1), abs=0.005)


def test_zero_sigma_trace_is_shot_noise():
    tr = noise.simulate_rf_trace(NoiseProcess(), 40.0, 1.0, duration_s=20.0, bin_us=100.0, seed=1)
    assert len(tr) == 200_000
    se = math.sqrt(2.0 / len(tr))
    assert tr.counts.var() / tr.counts.mean() == pytest.approx(1.0, abs=4 * se)


def test_trace_deterministic():
    p = NoiseProcess(sigma=0.1)
    a = noise.simulate_rf_trace(p, 100.0, 1.0, 1.0, seed=9)
    b = noise.simulate_rf_trace(p, 100.0, 1.0, 1.0, seed=9)
    c = noise.simulate_rf_trace(p, 100.0, 1.0, 1.0, seed=10)
    assert np.array_equal(a.counts, b.counts)
    assert not np.array_equal(a.counts, c.counts)


def test_trace_stationary():
    p = NoiseProcess(sigma=0.1, corr_time_us=1000.0)
    tr = noise.simulate_rf_trace(p, 200.0, 1.0, duration_s=100.0, seed=14)
    a, b = np.array_split(tr.counts, 2)
    # correlated samples: inflate the standard error by the integrated autocorrelation
    tau_bins = 1000.0 / tr.bin_us
    se = math.sqrt((a.var() + b.var()) / a.size * (1 + 2 * tau_bins))
    assert abs(a.mean() - b.mean()) < 3 * se


def test_trace_histogram_matches_pmf():
    p = NoiseProcess(sigma=0.2, corr_time_us=100.0)
    tr = noise.simulate_rf_trace(p, 30.0, 1.0, duration_s=100.0, bin_us=100.0, seed=5)
    assert len(tr) == 1_000_000
    # thin the trace to nearly independent bins before the goodness-of-fit test
    k = tr.counts[::5]
    obs = np.bincount(k)
    exp = noise.intensity_pmf(p, 30.0, 1.0, np.arange(obs.size)) * k.size
    exp[-1] += k.size - exp.sum()
    keep = exp >= 5
    o = np.append(obs[keep], obs[~keep].sum())
    e = np.append(exp[keep], exp[~keep].sum())
    chi2 = ((o - e) ** 2 / e).sum()
    assert stats.chi2.sf(chi2, o.size - 1) > 0.01


# --- fitting ------------------------------------------------------------------


@pytest.mark.parametrize("frac", [0.048, 0.2])
def test_fit_round_trip(frac):
    p = NoiseProcess(sigma=frac)
    tr = noise.simulate_rf_trace(p, 1000.0, 1.0, duration_s=30.0, seed=11)
    fit = noise.fit_noise(tr, linewidth=1.0)
    assert fit.converged
    assert fit.sigma_hat == pytest.approx(frac, rel=0.10)
    assert fit.m_max_hat == pytest.approx(1000.0, rel=0.02)
    assert fit.linewidth_hat == 1.0


def test_fit_shot_noise_resolution():
    # sigma only enters through an excess index of dispersion of about 32 m_max sigma^4,
    # whose sampling error is sqrt(2/N); a noiseless trace stays below the 3 s.e. level
    m_max, n = 1e4, 1_000_000
    tr = noise.simulate_rf_trace(NoiseProcess(), m_max, 1.0, duration_s=n * 1e-4, seed=14)
    fit = noise.fit_noise(tr, linewidth=1.0)
    assert fit.sigma_hat <= (3 * math.sqrt(2 / n) / (32 * m_max)) ** 0.25
    assert fit.m_max_hat == pytest.approx(m_max, rel=1e-3)


def test_fit_with_free_mean():
    p = NoiseProcess(sigma=0.1, mu=0.3)
    tr = noise.simulate_rf_trace(p, 1000.0, 1.0, duration_s=30.0, seed=13)
    fit = noise.fit_noise(tr, linewidth=1.0, fit_mu=True)
    assert abs(fit.mu_hat) == pytest.approx(0.3, rel=0.1)
    assert fit.sigma_hat == pytest.approx(0.1, rel=0.15)


def test_fit_rejects_short_trace():
    with pytest.raises(ValueError):
        noise.fit_noise(RfTrace(bin_us=1.0, counts=[3]))


def test_fit_flags_stalled_optimizer():
    tr = noise.simulate_rf_trace(NoiseProcess(sigma=0.1), 1000.0, 1.0, duration_s=2.0, seed=14)
    fit = noise.fit_noise(tr, maxiter=2)
    assert isinstance(fit.converged, bool)
    assert fit.sigma_hat >= 0 and fit.m_max_hat > 0
