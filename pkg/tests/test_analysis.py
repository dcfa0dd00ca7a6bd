import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qdhom import analysis
from qdhom.analysis import CorrelationHistogram, PeakReport
from qdhom.physics import EmitterSpec
from qdhom.simulate import BlinkModel, InterferenceSetup, TimeTagStream, simulate_remote_hom

PERIOD = 12_500  # ps, a whole number of bins so synthetic peaks are exact


def stream_from(t0, t1, period=PERIOD):
    ch = np.r_[np.zeros(len(t0), np.uint8), np.ones(len(t1), np.uint8)]
    ts = np.r_[np.asarray(t0, np.int64), np.asarray(t1, np.int64)]
    order = np.lexsort((ch, ts))
    return TimeTagStream(ch[order], ts[order], period_ps=period)


def comb_histogram(side=1000, central=0, first=None, range_ps=400_000, bin_ps=50):
    n = range_ps // bin_ps
    counts = np.zeros(2 * n + 1, np.int64)
    for k in range(-(range_ps // PERIOD), range_ps // PERIOD + 1):
        area = central if k == 0 else (first if first is not None and abs(k) == 1 else side)
        counts[n + k * PERIOD // bin_ps] = area
    return CorrelationHistogram(bin_ps, range_ps, counts, {"period_ps": float(PERIOD)})


def report(a_central, a_side):
    return PeakReport(a_central, np.array([-2, 2]), np.array([a_side, a_side]), a_side, 40)


# --- histogram type -----------------------------------------------------------


def test_histogram_validation():
    with pytest.raises(ValueError):
        CorrelationHistogram(0, 100, np.zeros(3))
    with pytest.raises(ValueError):
        CorrelationHistogram(30, 100, np.zeros(7))
    with pytest.raises(ValueError):
        CorrelationHistogram(50, 100, np.zeros(4))
    h = CorrelationHistogram(50, 100, [0, 1, 2, 3, 4])
    assert h.delays.tolist() == [-100, -50, 0, 50, 100]
    assert h.total_pairs == 10
    with pytest.raises(ValueError):
        h.period_ps


# --- correlator ---------------------------------------------------------------


def test_equal_times_give_zero_bin():
    h = analysis.build_histogram(stream_from([5000], [5000]), 50, 1000)
    assert h.total_pairs == 1
    assert h.counts[h.delays == 0] == 1


def test_sign_convention_and_range_edges():
    h = analysis.build_histogram(stream_from([10_000], [10_100, 11_000, 9_000, 8_999]), 50, 1000)
    assert h.counts[h.delays == 100] == 1
    assert h.counts[h.delays == 1000] == 1
    assert h.counts[h.delays == -1000] == 1
    assert h.total_pairs == 3  # -1001 is outside the range


def test_comb_structure():
    t = np.arange(200) * PERIOD
    h = analysis.build_histogram(stream_from(t, t + 0), 50, 200_000)
    nz = h.delays[h.counts > 0]
    assert np.all(nz % PERIOD == 0)
    assert h.counts[h.delays == 0] == 200
    assert h.counts[h.delays == PERIOD] == 199


def test_unsorted_stream_rejected():
    s = TimeTagStream(np.array([0, 0, 1], np.uint8), np.array([50, 10, 20]), period_ps=PERIOD)
    with pytest.raises(ValueError, match="not sorted"):
        analysis.build_histogram(s, 50, 1000)


def test_empty_channel():
    h = analysis.build_histogram(stream_from([1, 2, 3], []), 50, 1000)
    assert h.total_pairs == 0


tags = st.lists(st.integers(0, 60_000), min_size=0, max_size=300)


@settings(max_examples=200, deadline=None)
@given(tags, tags, st.sampled_from([10, 50, 64]), st.integers(1, 40), st.integers(1, 4))
def test_matches_all_pairs_oracle(t0, t1, bin_ps, n_half, workers):
    s = stream_from(sorted(t0), sorted(t1))
    range_ps = bin_ps * n_half * 10
    h = analysis.build_histogram(s, bin_ps, range_ps, workers=workers)
    assert np.array_equal(h.counts, analysis.all_pairs_histogram(s, bin_ps, range_ps))


def test_prefix_matches_oracle_on_simulated_stream():
    e = EmitterSpec(tau_ps=200, m_intrinsic=0.913, g2_zero=0.014, sigma_noise_frac=0.048)
    s = simulate_remote_hom(e, e, InterferenceSetup(), pulses=2_000_000, seed=1)
    p = TimeTagStream(s.channels[:10_000], s.timestamps[:10_000], period_ps=s.period_ps)
    h = analysis.build_histogram(p, 50, 7_000_000)
    assert np.array_equal(h.counts, analysis.all_pairs_histogram(p, 50, 7_000_000))
    full = analysis.build_histogram(s, 50, 200_000)
    rep = analysis.integrate_peaks(full, n_side=5)
    assert rep.a_central < 0.2 * rep.a_side_mean  # visible HOM deficit


# --- peaks --------------------------------------------------------------------


def test_delta_peaks_exact_areas():
    h = comb_histogram(side=1234, central=77)
    rep = analysis.integrate_peaks(h)
    assert rep.a_central == 77
    assert np.all(rep.side_areas == 1234)
    assert rep.a_side_mean == 1234
    assert rep.n_side_used == 2 * 20
    assert rep.excluded_indices == (-1, 1)


def test_window_is_exactly_its_width():
    n = 400_000 // 50
    counts = np.ones(2 * n + 1, np.int64)
    h = CorrelationHistogram(50, 400_000, counts, {"period_ps": float(PERIOD)})
    rep = analysis.integrate_peaks(h, window_ns=4)
    assert rep.a_central == 80
    assert np.all(rep.side_areas == 80)


def test_exclusion_toggle_shifts_side_mean_by_first_peak_excess():
    h = comb_histogram(side=1000, first=1600)
    on = analysis.integrate_peaks(h, exclude_first_side=True)
    off = analysis.integrate_peaks(h, exclude_first_side=False)
    assert on.a_side_mean == 1000
    assert off.a_side_mean == pytest.approx(1000 + 2 * 600 / 40)
    assert off.excluded_indices == ()


def test_empty_central():
    assert analysis.integrate_peaks(comb_histogram(central=0)).a_central == 0


def test_overlapping_window_rejected():
    with pytest.raises(ValueError, match="overlaps"):
        analysis.integrate_peaks(comb_histogram(), window_ns=12.5)


def test_too_few_side_peaks_rejected():
    with pytest.raises(ValueError, match="side peaks"):
        analysis.integrate_peaks(comb_histogram(range_ps=40_000))


# --- visibilities -------------------------------------------------------------


def test_vhom_examples():
    assert analysis.vhom(report(0, 100.0)) == 1.0
    assert analysis.vhom(report(50, 100.0)) == 0.0
    assert analysis.vhom(report(5.67, 100.0)) == pytest.approx(0.8866, abs=1e-12)
    with pytest.raises(ValueError):
        analysis.vhom(report(1, 0.0))


def test_correct_single_examples():
    assert analysis.correct_single(0.73, 0.5, 0.5, 0.0) == pytest.approx(0.73, rel=1e-15)
    assert analysis.correct_single(0.8866, 0.47, 0.53, 0.014) == pytest.approx(0.913, abs=1e-3)
    rt4 = 4 * 0.47 * 0.53
    assert analysis.correct_single(1 - rt4 * 1.014, 0.47, 0.53, 0.014) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        analysis.correct_single(0.9, 0.5, 0.5, 1.0)
    with pytest.raises(ValueError):
        analysis.correct_single(0.9, 0.0, 1.0, 0.0)


def test_vrem_examples():
    assert analysis.vrem(report(40, 100.0), report(40, 100.0)) == 0.0
    assert analysis.vrem(report(0, 100.0), report(40, 100.0)) == 1.0
    assert analysis.vrem(report(0.147 * 50, 100.0), report(50, 100.0)) == pytest.approx(0.853, rel=1e-12)
    with pytest.raises(ValueError):
        analysis.vrem(report(1, 100.0), report(0, 100.0))


def test_correct_remote_examples():
    m = analysis.correct_remote(0.853, 0.46, 0.54, 0.014, 0.020)
    assert m == pytest.approx(1.01288 * 1.017 * 0.853, rel=1e-5)
    assert m == pytest.approx(0.8787, abs=1e-4)
    assert analysis.correct_remote(0.6, 0.5, 0.5, 0, 0) == 0.6
    assert analysis.remote_factor(0.3, 0.7, 0.1, 0.1) == pytest.approx(1.10 * (0.09 + 0.49) / 0.42, rel=1e-15)


@given(st.floats(0.0, 1.0), st.floats(0.05, 0.95), st.floats(0.0, 0.5))
def test_single_round_trip(m, r, g2):
    assert analysis.correct_single(analysis.invert_single(m, r, 1 - r, g2), r, 1 - r, g2) == pytest.approx(m, abs=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.05, 0.95), st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_remote_round_trip(m, r, g1, g2):
    v = m / analysis.remote_factor(r, 1 - r, g1, g2)
    assert analysis.correct_remote(v, r, 1 - r, g1, g2) == pytest.approx(m, abs=1e-12)


def test_expected_perp_ratio():
    assert analysis.expected_perp_ratio() == 0.5
    assert analysis.expected_perp_ratio(0.46, 0.54, 0.014, 0.020) == pytest.approx(0.5117, abs=1e-4)


# --- g2 -----------------------------------------------------------------------


def test_g2_ideal_single_photons():
    e = EmitterSpec(tau_ps=200, m_intrinsic=0.9)
    h = analysis.build_histogram(simulate_remote_hom(e, e, InterferenceSetup(), pulses=10_000_000, seed=2, blocked=2), 50, 1_000_000)
    g2, err = analysis.g2_extract(h)
    assert g2 == pytest.approx(0.0, abs=3 * err)
    assert err > 0


def test_g2_calibrated_source():
    e = EmitterSpec(tau_ps=200, m_intrinsic=0.913, g2_zero=0.014)
    s = simulate_remote_hom(e, e, InterferenceSetup(), pulses=40_000_000, seed=3, blocked=2)
    g2, err = analysis.g2_extract(analysis.build_histogram(s, 50, 1_000_000))
    assert err <= 0.003
    assert g2 == pytest.approx(0.014, abs=0.003)


def test_g2_poissonian_stream():
    rng = np.random.default_rng(0)
    n = 4_000_000
    epochs = np.arange(n, dtype=np.int64) * PERIOD
    t0 = epochs[rng.random(n) < 0.02] + 100
    t1 = epochs[rng.random(n) < 0.02] + 100
    g2, err = analysis.g2_extract(analysis.build_histogram(stream_from(t0, t1), 50, 1_000_000))
    assert g2 == pytest.approx(1.0, abs=3 * err)


# --- sanity checks ------------------------------------------------------------


def both_polarisations(setup, blink=None, pulses=10_000_000, seed=5):
    e = EmitterSpec(tau_ps=200, m_intrinsic=0.913, sigma_noise_frac=0.048)
    par = simulate_remote_hom(e, e, setup, pulses=pulses, seed=seed, blink=blink)
    perp_setup = InterferenceSetup(**{**setup.__dict__, "polarization": "orthogonal"})
    perp = simulate_remote_hom(e, e, perp_setup, pulses=pulses, seed=seed + 1, blink=blink)
    return analysis.build_histogram(par, 50, 3_000_000), analysis.build_histogram(perp, 50, 3_000_000)


def test_sanity_checks_pass_without_blinking():
    hp, ho = both_polarisations(InterferenceSetup())
    flags = analysis.sanity_checks(ho, hp)
    assert flags["half_check"] == analysis.PASS
    assert flags["blinking"] == analysis.PASS


def test_blinking_check_fails_with_telegraph_gating():
    hp, ho = both_polarisations(InterferenceSetup(), blink=BlinkModel(True, 0.5, 1.0))
    flags = analysis.sanity_checks(ho, hp)
    assert flags["blinking"] == analysis.FAIL
    env = flags["details"]["envelope_par"]
    assert env["delta_chi2"] > env["threshold"]


def test_half_check_survives_count_imbalance():
    # 10 % brightness difference: ratio 2 b1 b2 / (b1 + b2)^2 = 0.9977 * 0.5
    hp, ho = both_polarisations(InterferenceSetup(brightness_1=0.061, brightness_2=0.055), seed=9)
    flags = analysis.sanity_checks(ho, hp)
    assert flags["half_check"] == analysis.PASS


def test_half_check_fails_on_interfering_stream():
    hp, _ = both_polarisations(InterferenceSetup(), pulses=5_000_000)
    status, ratio, _ = analysis.half_check(analysis.integrate_peaks(hp))
    assert status == analysis.FAIL and ratio < 0.2


def test_sanity_not_applicable():
    h = comb_histogram(range_ps=100_000)  # 12 usable side peaks, fewer than 20
    flags = analysis.sanity_checks(None, h)
    assert flags["half_check"] == analysis.NOT_APPLICABLE
    assert flags["blinking"] == analysis.NOT_APPLICABLE


def test_envelope_flat_on_exact_comb():
    rep = analysis.integrate_peaks(comb_histogram(side=5000, range_ps=3_000_000))
    assert analysis.envelope_decay(rep)["status"] == analysis.PASS


# --- pipelines ----------------------------------------------------------------


def test_analyze_single_report_shape():
    h = comb_histogram(side=1000, central=57, first=750)
    rep = analysis.analyze_single(h, 0.47, 0.53, 0.014)
    assert rep.kind == "single"
    assert rep.v_raw == pytest.approx(0.886)
    assert rep.v_err > 0 and rep.m_err > 0
    assert rep.flags["half_check"] == analysis.NOT_APPLICABLE
    assert rep.flags["negative_visibility"] is False
    json.dumps(rep.to_dict())


def test_negative_visibility_is_reported():
    rep = analysis.analyze_single(comb_histogram(side=1000, central=800), 0.5, 0.5, 0.0)
    assert rep.v_raw == pytest.approx(-0.6)
    assert rep.flags["negative_visibility"] is True


def test_analyze_remote_zero_parallel_central():
    hp = comb_histogram(side=1000, central=0)
    ho = comb_histogram(side=1000, central=500)
    rep = analysis.analyze_remote(hp, ho, 0.5, 0.5, 0.0, 0.0)
    assert rep.v_raw == 1.0
    assert rep.v_err > 0
    assert rep.flags["half_check"] == analysis.PASS


def test_uncertainties_shrink_as_inverse_sqrt_n():
    e = EmitterSpec(tau_ps=200, m_intrinsic=0.9)
    setup = InterferenceSetup()
    ns, errs = [1_000_000, 4_000_000, 16_000_000], []
    for n in ns:
        per_seed = []
        for seed in range(3):
            hp = analysis.build_histogram(simulate_remote_hom(e, e, setup, pulses=n, seed=seed), 50, 400_000)
            ho = analysis.build_histogram(
                simulate_remote_hom(e, e, InterferenceSetup(polarization="orthogonal"), pulses=n, seed=seed + 50), 50, 400_000)
            per_seed.append(analysis.analyze_remote(hp, ho, 0.5, 0.5, 0, 0).m_err)
        errs.append(np.mean(per_seed))
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert slope == pytest.approx(-0.5, rel=0.2)
