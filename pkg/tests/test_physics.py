import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdhom import physics
from qdhom.physics import CavitySpec, EmitterSpec, PairState

taus = st.floats(50.0, 1000.0)
ms = st.floats(0.01, 1.0)


def em(tau=200.0, m=1.0, **kw):
    return EmitterSpec(tau_ps=tau, tau_bulk_ps=max(1000.0, tau), m_intrinsic=m, **kw)


def gaussian_average_oracle(e1, e2, sigma):
    """Closed form of the Lorentzian-Gaussian average (Voigt at the origin)."""
    with mpmath.workdps(40):
        b = mpmath.mpf(0.5) * (mpmath.mpf(e1.coherence_rate_per_ns) + mpmath.mpf(e2.coherence_rate_per_ns))
        s = mpmath.sqrt(2) * mpmath.mpf(sigma)
        z = b / (mpmath.sqrt(2) * s)
        peak = mpmath.mpf(physics.mutual_indistinguishability(e1, e2, 0.0))
        return float(peak * mpmath.sqrt(mpmath.pi / 2) * (b / s) * mpmath.erfc(z) * mpmath.exp(z * z))


# --- types --------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        {"tau_ps": 0.0},
        {"tau_ps": 300.0, "tau_bulk_ps": 200.0},
        {"m_intrinsic": 0.0},
        {"m_intrinsic": 1.01},
        {"g2_zero": 1.0},
        {"g2_zero": -0.1},
        {"sigma_noise_frac": -0.01},
        {"noise_corr_time_us": 0.0},
    ],
)
def test_emitter_rejects_invalid(kw):
    with pytest.raises(ValueError):
        EmitterSpec(**kw)


def test_cavity_rejects_invalid():
    with pytest.raises(ValueError):
        CavitySpec(kappa_fwhm_pm=0.0)
    with pytest.raises(ValueError):
        CavitySpec(purcell_factor=-1.0)


def test_dephasing_constructor_round_trip():
    e = EmitterSpec.from_dephasing(200.0, 0.3)
    assert e.gamma_dephasing_per_ns == pytest.approx(0.3, rel=1e-12)
    assert e.m_intrinsic == pytest.approx(5.0 / 5.6, rel=1e-12)
    assert e.coherence_rate_per_ns >= e.gamma_per_ns


def test_pair_state_consistency():
    p = PairState.from_emitters(em(400.0), em(200.0))
    assert p.s12 == pytest.approx(8 / 9)
    assert p.r_sign == 1
    assert PairState.from_emitters(em(200.0), em(400.0)).r_sign == -1
    with pytest.raises(ValueError):
        PairState(0.0, 1.2, 200.0, 1)
    with pytest.raises(ValueError):
        PairState(0.0, 0.5, 200.0, 0)


# --- temporal overlap ---------------------------------------------------------


def test_overlap_examples():
    assert physics.temporal_overlap(200, 200) == 1.0
    assert physics.temporal_overlap(200, 400) == pytest.approx(8 / 9, rel=1e-15)
    assert physics.temporal_overlap(200, 200 * 1.792) == pytest.approx(0.92, abs=0.005)


def test_overlap_rejects_nonpositive():
    with pytest.raises(ValueError):
        physics.temporal_overlap(0.0, 100.0)


@given(taus, taus, st.floats(0.01, 100.0))
def test_overlap_scale_invariant(t1, t2, a):
    assert physics.temporal_overlap(a * t1, a * t2) == pytest.approx(physics.temporal_overlap(t1, t2), rel=1e-12)
    assert 0 < physics.temporal_overlap(t1, t2) <= 1.0


# --- mutual indistinguishability and bound ------------------------------------


def test_m12_examples():
    assert physics.mutual_indistinguishability(em(), em(), 0.0) == pytest.approx(1.0, rel=1e-15)
    e = em(m=0.91)
    assert physics.mutual_indistinguishability(e, e, 0.0) == pytest.approx(0.91, rel=1e-14)
    half_width = 0.5 * (e.coherence_rate_per_ns * 2)
    assert physics.mutual_indistinguishability(e, e, half_width) == pytest.approx(0.455, rel=1e-14)


def test_m12_vectorised():
    e = em(m=0.9)
    d = np.linspace(-20, 20, 11)
    out = physics.mutual_indistinguishability(e, e, d)
    assert out.shape == d.shape
    assert np.allclose(out, out[::-1])


def test_bound_examples():
    assert physics.upper_bound(em(m=0.975), em(m=0.975)) == pytest.approx(0.975, rel=1e-15)
    assert physics.upper_bound(em(), em()) == 1.0


@settings(max_examples=300)
@given(taus, taus, ms, ms, st.floats(-50.0, 50.0))
def test_m12_bounded_and_symmetric(t1, t2, m1, m2, delta):
    e1, e2 = em(t1, m1), em(t2, m2)
    ub = physics.upper_bound(e1, e2)
    m12 = physics.mutual_indistinguishability(e1, e2, delta)
    assert m12 <= ub * (1 + 1e-12)
    assert ub <= min(physics.temporal_overlap(t1, t2), 1.0) * (1 + 1e-12)
    assert m12 == pytest.approx(physics.mutual_indistinguishability(e2, e1, delta), rel=1e-12)
    assert physics.mutual_indistinguishability(e1, e2, 0.0) == pytest.approx(ub, rel=1e-12)


def test_bound_forms_agree_on_random_draws():
    rng = np.random.default_rng(0)
    for t1, t2, m1, m2 in zip(*(rng.uniform(50, 1000, (2, 10_000))), *(rng.uniform(1e-3, 1.0, (2, 10_000)))):
        ub = physics.upper_bound(em(t1, m1), em(t2, m2))
        alt = physics.upper_bound_from_overlap(physics.temporal_overlap(t1, t2), m1, m2, physics.overlap_sign(t1, t2))
        assert abs(alt - ub) <= 1e-12 * ub


def test_overlap_form_needs_the_sign():
    t1, t2, m1, m2 = 200.0, 400.0, 0.6, 0.95
    s12 = physics.temporal_overlap(t1, t2)
    ub = physics.upper_bound(em(t1, m1), em(t2, m2))
    assert physics.upper_bound_from_overlap(s12, m1, m2, -1) == pytest.approx(ub, rel=1e-12)
    assert abs(physics.upper_bound_from_overlap(s12, m1, m2, +1) - ub) > 1e-3


# --- noise averaging ----------------------------------------------------------


def test_noise_average_reported_values():
    e91, e1 = em(m=0.91), em(m=1.0)
    sigma = 0.048 * e91.gamma_per_ns
    assert physics.noise_averaged_m12(e91, e91, sigma) == pytest.approx(0.907, abs=1e-3)
    assert physics.noise_averaged_m12(e1, e1, sigma) == pytest.approx(0.995, abs=1e-3)


@pytest.mark.parametrize("method", ["numerical_average", "closed_form_as_printed"])
def test_noise_average_zero_sigma_is_bound(method):
    e1, e2 = em(180, 0.9), em(230, 0.8)
    assert physics.noise_averaged_m12(e1, e2, 0.0, method) == physics.upper_bound(e1, e2)


@settings(max_examples=60, deadline=None)
@given(taus, taus, ms, ms, st.floats(0.01, 20.0))
def test_noise_average_matches_voigt_oracle(t1, t2, m1, m2, sigma):
    e1, e2 = em(t1, m1), em(t2, m2)
    assert physics.noise_averaged_m12(e1, e2, sigma) == pytest.approx(gaussian_average_oracle(e1, e2, sigma), rel=1e-9)


def test_noise_average_monotone_and_bounded():
    e1, e2 = em(200, 0.91), em(210, 0.93)
    vals = [physics.noise_averaged_m12(e1, e2, s) for s in np.linspace(0, 10, 41)]
    assert np.all(np.diff(vals) <= 1e-15)
    assert max(vals) <= physics.upper_bound(e1, e2)


def test_printed_closed_form_differs_from_average():
    e = em(m=0.91)
    sigma = 0.048 * e.gamma_per_ns
    printed = physics.noise_averaged_m12(e, e, sigma, "closed_form_as_printed")
    assert abs(printed - 0.9066) > 2e-3
    # with the noise scaled by four the printed expression matches the average
    assert physics.noise_averaged_m12(e, e, 4 * sigma, "closed_form_as_printed") == pytest.approx(
        physics.noise_averaged_m12(e, e, sigma), rel=1e-9
    )


def test_noise_average_rejects_bad_input():
    with pytest.raises(ValueError):
        physics.noise_averaged_m12(em(), em(), -1.0)
    with pytest.raises(ValueError):
        physics.noise_averaged_m12(em(), em(), 1.0, "bogus")


# --- erfcx --------------------------------------------------------------------


def test_erfcx_examples():
    assert physics.erfcx(0.0) == 1.0
    assert physics.erfcx(1.0) == pytest.approx(0.427583576155807, rel=1e-14)
    x = 1e4
    assert abs(physics.erfcx(x) * x * math.sqrt(math.pi) - 1) <= 1e-6


def test_erfcx_against_erfc_oracle():
    for x in np.linspace(0, 5, 101):
        want = float(mpmath.erfc(x))
        assert physics.erfcx(x) * math.exp(-x * x) == pytest.approx(want, rel=1e-12)


# --- Purcell ------------------------------------------------------------------


def test_purcell_examples():
    cav = CavitySpec(lambda_c_nm=930.0, kappa_fwhm_pm=100.0, purcell_factor=9.0)
    assert physics.purcell_lifetime(930.0, cav, 1000.0) == pytest.approx(100.0, rel=1e-12)
    assert physics.purcell_lifetime(930.05, cav, 1000.0) == pytest.approx(1000 / 5.5, rel=1e-12)
    far = CavitySpec(lambda_c_nm=930.0, kappa_fwhm_pm=100.0)  # default Purcell factor
    assert physics.purcell_lifetime(930.0 + 10.0, far, 1000.0) == pytest.approx(1000.0, rel=1e-4)
    taus = physics.purcell_lifetime(np.linspace(929.8, 930.2, 81), cav, 1000.0)
    assert taus.argmin() == 40


def test_wavelength_conversion_round_trip():
    d = physics.pm_to_angular_per_ns(0.11, 929.0)
    assert physics.angular_per_ns_to_pm(d, 929.0) == pytest.approx(0.11, rel=1e-14)
    # 0.11 pm at 929 nm is about 0.24 ns^-1, i.e. 4.8 % of 1/(200 ps) = 5 ns^-1
    assert d / 5.0 == pytest.approx(0.048, abs=0.001)
