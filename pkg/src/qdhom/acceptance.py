"""Built-in acceptance suite; each check returns a :class:`CriterionResult`."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import stats

from . import analysis, noise, physics, simulate, tuning

PAPER_E1 = physics.EmitterSpec(tau_ps=200, m_intrinsic=0.913, g2_zero=0.014, sigma_noise_frac=0.048)
PAPER_E2 = physics.EmitterSpec(tau_ps=200, m_intrinsic=0.911, g2_zero=0.020, sigma_noise_frac=0.048)
PAPER_REMOTE = simulate.InterferenceSetup(r_bs=0.46, t_bs=0.54)


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.number}: {self.name} | {self.detail} | {self.seconds:.2f} s"


def _timed(number: int, name: str, fn: Callable[[], tuple[bool, str]], budget_s: float | None = None) -> CriterionResult:
    t0 = time.perf_counter()
    ok, detail = fn()
    dt = time.perf_counter() - t0
    if budget_s is not None and dt > budget_s:
        ok, detail = False, f"{detail}; runtime {dt:.1f} s over budget {budget_s} s"
    return CriterionResult(number, name, ok, detail, dt)


# 1 ----------------------------------------------------------------------------


def criterion_1() -> CriterionResult:
    def run():
        e91 = physics.EmitterSpec(tau_ps=200, m_intrinsic=0.91)
        e1 = physics.EmitterSpec(tau_ps=200, m_intrinsic=1.0)
        sigma = 0.048 * e91.gamma_per_ns
        a = physics.noise_averaged_m12(e91, e91, sigma)
        b = physics.noise_averaged_m12(e1, e1, sigma)
        ok = abs(a - 0.9065) <= 1e-3 and abs(b - 0.995) <= 1e-3
        return ok, f"M=0.91 -> {a:.5f} (0.9065+-0.001), M=1 -> {b:.5f} (0.995+-0.001)"

    return _timed(1, "noise-averaged M12", run, budget_s=1.0)


# 2 ----------------------------------------------------------------------------


def criterion_2() -> CriterionResult:
    def run():
        m = analysis.correct_remote(0.853, 0.46, 0.54, 0.014, 0.020)
        ok = abs(m - 0.8787) <= 5e-5 and abs(m - 0.88) <= 0.01
        return ok, f"M12 = {m:.5f} (0.8787; 0.88+-0.01)"

    return _timed(2, "remote correction chain", run, budget_s=0.1)


# 3 ----------------------------------------------------------------------------


def run_paper_remote(pulses: int = 20_000_000, seed: int = 1, workers: int | None = None):
    """Parallel and orthogonal runs of the two-source setup and their analysis."""
    par = simulate.simulate_remote_hom(PAPER_E1, PAPER_E2, PAPER_REMOTE, pulses=pulses, seed=seed, workers=workers)
    perp = simulate.simulate_remote_hom(
        PAPER_E1, PAPER_E2, replace(PAPER_REMOTE, polarization="orthogonal"), pulses=pulses, seed=seed + 1, workers=workers
    )
    h_par = analysis.build_histogram(par, workers=workers)
    h_perp = analysis.build_histogram(perp, workers=workers)
    return analysis.analyze_remote(h_par, h_perp, 0.46, 0.54, 0.014, 0.020)


def criterion_3(pulses: int = 20_000_000, seed: int = 1) -> CriterionResult:
    def run():
        rep = run_paper_remote(pulses, seed)
        bound = simulate.pair_indistinguishability(PAPER_E1, PAPER_E2)
        v_ok = abs(rep.v_raw - 0.853) <= 0.01
        m_ok = abs(rep.m_corrected - bound) <= 3 * rep.m_err
        h_ok = rep.flags["half_check"] == analysis.PASS
        detail = (
            f"V_rem = {rep.v_raw:.4f}+-{rep.v_err:.4f} (0.853+-0.01: {'ok' if v_ok else 'off'}); "
            f"M12 = {rep.m_corrected:.4f}+-{rep.m_err:.4f} vs bound {bound:.4f} ({'ok' if m_ok else 'off'}); "
            f"half-check {rep.flags['half_check']}"
        )
        return v_ok and m_ok and h_ok, detail

    return _timed(3, "end-to-end remote Monte Carlo", run, budget_s=300.0)


# 4 ----------------------------------------------------------------------------


def criterion_4(n: int = 10_000, seed: int = 4) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        worst_eq, worst_lim = 0.0, 0.0
        for t1, t2, m1, m2 in zip(rng.uniform(20, 2000, n), rng.uniform(20, 2000, n), rng.uniform(0.05, 1, n), rng.uniform(0.05, 1, n)):
            e1 = physics.EmitterSpec(tau_ps=t1, tau_bulk_ps=1e4, m_intrinsic=m1)
            e2 = physics.EmitterSpec(tau_ps=t2, tau_bulk_ps=1e4, m_intrinsic=m2)
            ub = physics.upper_bound(e1, e2)
            s12 = physics.temporal_overlap(t1, t2)
            alt = physics.upper_bound_from_overlap(s12, m1, m2, physics.overlap_sign(t1, t2))
            worst_eq = max(worst_eq, abs(alt - ub) / ub)
            worst_lim = max(worst_lim, abs(physics.mutual_indistinguishability(e1, e2, 0.0) - ub) / ub)
        return max(worst_eq, worst_lim) <= 1e-12, f"max rel diff overlap form {worst_eq:.2e}, zero-detuning {worst_lim:.2e} (<=1e-12)"

    return _timed(4, "algebraic equivalence of bound forms", run)


# 5 ----------------------------------------------------------------------------


def erfcx_oracle(x: float) -> float:
    import mpmath

    with mpmath.workdps(40):
        return float(mpmath.exp(mpmath.mpf(x) ** 2) * mpmath.erfc(mpmath.mpf(x)))


def erfcx_grid() -> np.ndarray:
    return np.concatenate([np.linspace(-10, 10, 500, endpoint=False), np.geomspace(10, 1e6, 500)])


def criterion_5() -> CriterionResult:
    def run():
        x = erfcx_grid()
        ours = physics.erfcx(x)
        ref = np.array([erfcx_oracle(v) for v in x])
        worst = float(np.max(np.abs(ours - ref) / np.abs(ref)))
        xa = 1e4
        series = (1 - 1 / (2 * xa**2) + 3 / (4 * xa**4)) / (xa * math.sqrt(math.pi))
        asym = abs(physics.erfcx(xa) - series) / series
        return worst <= 1e-12 and asym <= 1e-12, f"max rel err {worst:.2e} over {x.size} points; asymptotic at 1e4 {asym:.2e}"

    return _timed(5, "erfcx accuracy", run)


# 6 ----------------------------------------------------------------------------

RF_M_MAX = 1e4  # counts per 100 us bin on resonance


def criterion_6(n_bins: int = 1_000_000, seed: int = 6) -> CriterionResult:
    def run():
        parts, ok = [], True
        for i, frac in enumerate((0.02, 0.048, 0.10, 0.20)):
            trace = noise.simulate_rf_trace(noise.NoiseProcess(sigma=frac), RF_M_MAX, 1.0, n_bins * 1e-4, 100.0, seed + i)
            fit = noise.fit_noise(trace, linewidth=1.0)
            rel = abs(fit.sigma_hat - frac) / frac
            ok &= rel <= 0.10
            parts.append(f"{frac:.3f}->{fit.sigma_hat:.4f}")
        trace = noise.simulate_rf_trace(noise.NoiseProcess(sigma=0.0), RF_M_MAX, 1.0, n_bins * 1e-4, 100.0, seed + 10)
        s0 = noise.fit_noise(trace, linewidth=1.0).sigma_hat
        ok &= s0 <= 0.005
        parts.append(f"0->{s0:.4f}")
        return ok, "sigma/linewidth " + ", ".join(parts)

    return _timed(6, "noise-fit round trip", run, budget_s=120.0)


# 7 ----------------------------------------------------------------------------


def random_fixture(rng: np.random.Generator, max_tags: int = 10_000, span_ps: int = 50_000_000) -> simulate.TimeTagStream:
    n = int(rng.integers(0, max_tags + 1))
    t = np.sort(rng.integers(0, span_ps, n))
    if n > 1 and rng.random() < 0.5:
        t[rng.integers(1, n, n // 10)] = t[rng.integers(0, n - 1, n // 10)]  # ties
        t.sort()
    ch = rng.integers(0, 2, n).astype(np.uint8)
    return simulate.TimeTagStream(ch, t, duration_ps=span_ps)


def benchmark_fixture(n_tags: int = 4_000_000, seed: int = 7) -> simulate.TimeTagStream:
    """Realistic-rate two-detector stream: about 1.5 MHz per channel."""
    setup = PAPER_REMOTE
    pulses = int(n_tags / 0.0383)
    return simulate.simulate_remote_hom(PAPER_E1, PAPER_E2, setup, pulses=pulses, seed=seed)


def correlator_throughput(stream, repeats: int = 3) -> float:
    analysis.build_histogram(stream, workers=1)  # compile
    best = math.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        analysis.build_histogram(stream, workers=1)
        best = min(best, time.perf_counter() - t0)
    return len(stream) / best


def criterion_7(n_fixtures: int = 100, seed: int = 7) -> CriterionResult:
    def run():
        rng = np.random.default_rng(seed)
        mismatches = 0
        for _ in range(n_fixtures):
            s = random_fixture(rng)
            bin_ps = int(rng.choice([1, 7, 50, 100]))
            rng_ps = bin_ps * int(rng.integers(1, 20_000))
            h = analysis.build_histogram(s, bin_ps, rng_ps)
            mismatches += not np.array_equal(h.counts, analysis.all_pairs_histogram(s, bin_ps, rng_ps))
        rate = correlator_throughput(benchmark_fixture())
        ok = mismatches == 0 and rate >= 1e7
        return ok, f"{mismatches}/{n_fixtures} fixtures differ from all-pairs oracle; {rate / 1e6:.1f} M tags/s on one core (>=10)"

    return _timed(7, "correlator oracle and throughput", run)


# 8 ----------------------------------------------------------------------------


def blinking_envelope_status(seed: int, blink: simulate.BlinkModel | None, pulses: int = 2_000_000) -> str:
    setup = replace(PAPER_REMOTE, polarization="orthogonal")
    s = simulate.simulate_remote_hom(PAPER_E1, PAPER_E2, setup, pulses=pulses, seed=seed, blink=blink)
    return analysis.envelope_decay(analysis.integrate_peaks(analysis.build_histogram(s)))["status"]


def criterion_8(n_seeds: int = 100, seed: int = 800) -> CriterionResult:
    def run():
        blink = simulate.BlinkModel(enabled=True, on_fraction=0.5, switch_time_us=1.0)
        flagged = sum(blinking_envelope_status(seed + i, blink) == analysis.FAIL for i in range(n_seeds))
        flat = sum(blinking_envelope_status(seed + 10_000 + i, None) == analysis.PASS for i in range(n_seeds))
        # a 2-sigma test alarms on 4.55 % of flat streams; more than 10/100 has < 1 % probability
        max_false = int(stats.binom.ppf(0.99, n_seeds, 1 - analysis.TWO_SIGMA_LEVEL))
        ok = flagged >= 0.95 * n_seeds and n_seeds - flat <= max_false
        return ok, (
            f"blinking flagged in {flagged}/{n_seeds} (>=95%); flat envelope passes in {flat}/{n_seeds} "
            f"(false alarms <= {max_false} at the 2-sigma level)"
        )

    return _timed(8, "blinking detector", run)


# 9 ----------------------------------------------------------------------------


def paper_scenario() -> tuning.TuningScenario:
    """Two sources with different Stark slopes and cavities detuned by 25 pm (synthetic values)."""
    e1 = replace(PAPER_E1, lambda0_nm=929.629)
    e2 = replace(PAPER_E2, lambda0_nm=929.640)
    s1 = tuning.TunableSource(e1, tuning.TuningModel(1100.0, 1300.0), physics.CavitySpec(lambda_c_nm=929.629))
    s2 = tuning.TunableSource(e2, tuning.TuningModel(1000.0, 1250.0), physics.CavitySpec(lambda_c_nm=929.654))
    return tuning.TuningScenario(s1, s2, PAPER_REMOTE)


PAPER_V1_RANGE, PAPER_V2_RANGE = (1100.0, 1300.0), (1000.0, 1250.0)


def criterion_9(n_runs: int = 50, seed: int = 900) -> CriterionResult:
    def run():
        sc = paper_scenario()
        best = tuning.analytic_optimum(sc, PAPER_V1_RANGE, PAPER_V2_RANGE)
        exact = tuning.grid_refine_optimize(sc, PAPER_V1_RANGE, PAPER_V2_RANGE, engine="analytic")
        exact_ok = abs(exact.v1 - best.v1) <= 1.0 and abs(exact.v2 - best.v2) <= 1.0
        hits = 0
        for i in range(n_runs):
            r = tuning.grid_refine_optimize(sc, PAPER_V1_RANGE, PAPER_V2_RANGE, dwell_s=1.0, seed=seed + i)
            hits += abs(r.m12_true - best.m12_true) <= 0.01
        e1, e2, _ = sc.point(best.v1, best.v2)
        _, side_rate = simulate.expected_remote_areas(e1, e2, PAPER_REMOTE, PAPER_REMOTE.rep_rate_mhz * 1e6)
        ok = exact_ok and hits >= 0.9 * n_runs
        return ok, (
            f"noiseless optimum ({exact.v1:.0f}, {exact.v2:.0f}) vs analytic ({best.v1:.0f}, {best.v2:.0f}); "
            f"{hits}/{n_runs} noisy runs within 1 pp of M12 = {best.m12_true:.4f} (>=90%); side-peak rate {side_rate / 1e3:.1f} kHz"
        )

    return _timed(9, "grid-refinement optimiser", run, budget_s=600.0)


# 10 ---------------------------------------------------------------------------


def stripe_fit(scan: tuning.ScanResult, which: str = "a_par") -> tuple[float, float, np.ndarray]:
    """Straight-line fit of the per-column minimum of a normalised-area map."""
    m = getattr(scan, which)
    v1, v2 = [], []
    for i, row in enumerate(m):
        ok = np.isfinite(row) & scan.active1[i] & scan.active2[i]
        if ok.sum() < 3:
            continue
        j = np.flatnonzero(ok)[np.argmin(row[ok])]
        if j in (0, row.size - 1):
            continue  # minimum pinned to the map edge: locus outside the grid
        v1.append(scan.v1[i])
        v2.append(scan.v2[j])
    slope, icpt = np.polyfit(v1, v2, 1)
    return slope, icpt, np.array([v1, v2])


def criterion_10(seed: int = 1000, step: float = 1.0) -> CriterionResult:
    def run():
        sc = paper_scenario()
        v1 = np.arange(1172.0, 1289.0, 4.0)  # locus stays inside the V2 grid
        v2 = np.arange(1000.0, 1250.0 + step / 2, step)
        scan = tuning.scan_map(sc, v1, v2, dwell_s=1.0, engine="counts", seed=seed)
        k_ratio = sc.s1.tuning.stark_pm_per_mv / sc.s2.tuning.stark_pm_per_mv
        slope, icpt, pts = stripe_fit(scan, "a_par")
        locus = tuning.stripe_locus(sc, pts[0])
        worst = float(np.max(np.abs(slope * pts[0] + icpt - locus)))
        stripe_ok = worst <= step
        # the orthogonal map must not single out the locus: on-locus vs off-locus means agree
        on = np.abs(scan.v2[None, :] - tuning.stripe_locus(sc, scan.v1)[:, None]) <= 2 * step
        live = scan.active1 & scan.active2 & np.isfinite(scan.a_perp)
        a_on, a_off = scan.a_perp[on & live], scan.a_perp[~on & live]
        z = (a_on.mean() - a_off.mean()) / math.sqrt(a_on.var() / a_on.size + a_off.var() / a_off.size)
        contrast = np.nanmean(scan.a_par[~on & live]) / np.nanmean(scan.a_par[on & live])
        perp_ok = abs(z) < 3.0
        return stripe_ok and perp_ok and contrast > 2, (
            f"parallel stripe slope {slope:.4f} vs Stark ratio {k_ratio:.4f}, max locus offset {worst:.2f} mV (<= {step} mV); "
            f"parallel off/on-stripe contrast {contrast:.2f}; orthogonal on/off-locus z = {z:.2f} (|z|<3)"
        )

    return _timed(10, "scan-map stripe", run)


CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
    6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10,
}


def run_all(numbers=None, echo: Callable[[str], None] | None = print) -> list[CriterionResult]:
    out = []
    for n in numbers or sorted(CRITERIA):
        res = CRITERIA[n]()
        out.append(res)
        if echo:
            echo(res.line())
    return out
