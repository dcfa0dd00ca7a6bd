"""Bias/strain control of the emitters, voltage-scan maps and grid-refinement optimisation.

Stark slopes, plateau extents and strain slopes are synthetic configuration;
nothing here is calibrated against a real device.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from . import analysis
from .physics import CavitySpec, EmitterSpec, decay_rate, pm_to_angular_per_ns, purcell_lifetime
from .simulate import (
    InterferenceSetup,
    default_workers,
    expected_remote_areas,
    pair_indistinguishability,
    simulate_remote_hom,
    substream,
)

Engine = Literal["analytic", "counts", "pulse"]

_SCAN_STREAM = 3
N_SIDE_PEAKS = 40  # side peaks averaged per histogram (20 each side)


@dataclass(frozen=True)
class TuningModel:
    plateau_v_min_mv: float = 1100.0
    plateau_v_max_mv: float = 1300.0
    stark_pm_per_mv: float | None = None  # None: plateau_width_pm / extent
    plateau_width_pm: float = 50.0
    strain_pm_per_step: float = 2.0
    strain_hysteresis_pm: float = 0.0
    edge_m_penalty: float = 0.05  # fractional loss of M at the very plateau edge; 0 disables

    def __post_init__(self):
        if not self.plateau_v_max_mv > self.plateau_v_min_mv:
            raise ValueError("plateau_v_max_mv must exceed plateau_v_min_mv")
        if self.stark_pm_per_mv is None:
            object.__setattr__(self, "stark_pm_per_mv", self.plateau_width_pm / self.extent_mv)
        for name in ("stark_pm_per_mv", "plateau_width_pm", "strain_pm_per_step", "strain_hysteresis_pm"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        span = abs(self.stark_pm_per_mv) * self.extent_mv
        if abs(span - self.plateau_width_pm) > 0.01 * self.plateau_width_pm:
            raise ValueError(
                f"plateau_width_pm ({self.plateau_width_pm}) inconsistent with |stark slope| x extent ({span:.3f})"
            )
        if not 0 <= self.edge_m_penalty < 1:
            raise ValueError("edge_m_penalty must lie in [0, 1)")
        if self.strain_hysteresis_pm < 0:
            raise ValueError("strain_hysteresis_pm must be >= 0")

    @property
    def extent_mv(self) -> float:
        return self.plateau_v_max_mv - self.plateau_v_min_mv

    @property
    def v_mid_mv(self) -> float:
        return 0.5 * (self.plateau_v_min_mv + self.plateau_v_max_mv)

    def in_plateau(self, bias_mv: float) -> bool:
        return self.plateau_v_min_mv <= bias_mv <= self.plateau_v_max_mv

    def edge_factor(self, bias_mv: float) -> float:
        """Multiplier on M: 1 in the inner 80 % of the plateau, raised-cosine dip to the edges."""
        if self.edge_m_penalty == 0 or not self.in_plateau(bias_mv):
            return 1.0
        zone = 0.1 * self.extent_mv
        depth = min(bias_mv - self.plateau_v_min_mv, self.plateau_v_max_mv - bias_mv)
        if depth >= zone:
            return 1.0
        w = 0.5 * (1.0 + math.cos(math.pi * depth / zone))  # 1 at the edge, 0 at the zone boundary
        return 1.0 - self.edge_m_penalty * w


class StrainActuator:
    """Step-wise strain tuning with a fixed backlash on every direction reversal."""

    def __init__(self, model: TuningModel):
        self.model = model
        self.steps = 0
        self.offset_pm = 0.0
        self._direction = 0

    def move(self, steps: int) -> float:
        if steps == 0:
            return self.offset_pm
        direction = 1 if steps > 0 else -1
        shift = steps * self.model.strain_pm_per_step
        if self._direction and direction != self._direction:
            lost = min(self.model.strain_hysteresis_pm, abs(shift))
            shift -= direction * lost * math.copysign(1.0, self.model.strain_pm_per_step)
        self._direction = direction
        self.steps += steps
        self.offset_pm += shift
        return self.offset_pm


def wavelength_from_controls(bias_mv: float, strain_steps: float, model: TuningModel, emitter: EmitterSpec):
    """Trion emission wavelength in nm, or ``None`` outside the charge plateau."""
    if not model.in_plateau(bias_mv):
        return None
    shift_pm = model.stark_pm_per_mv * (bias_mv - model.v_mid_mv) + model.strain_pm_per_step * strain_steps
    return emitter.lambda0_nm + shift_pm * 1e-3


def lifetime_from_wavelength(lambda_nm, emitter: EmitterSpec, cavity: CavitySpec):
    return purcell_lifetime(lambda_nm, cavity, emitter.tau_bulk_ps)


def m_from_wavelength(lambda_nm, emitter: EmitterSpec, cavity: CavitySpec):
    """Individual indistinguishability with the emitter's pure-dephasing rate held fixed."""
    gamma = decay_rate(np.asarray(lifetime_from_wavelength(lambda_nm, emitter, cavity)))
    out = gamma / (gamma + 2.0 * emitter.gamma_dephasing_per_ns)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TunableSource:
    emitter: EmitterSpec
    tuning: TuningModel = TuningModel()
    cavity: CavitySpec = CavitySpec()
    strain_steps: float = 0.0

    def wavelength(self, bias_mv: float):
        return wavelength_from_controls(bias_mv, self.strain_steps, self.tuning, self.emitter)

    def emitter_at(self, bias_mv: float) -> EmitterSpec | None:
        lam = self.wavelength(bias_mv)
        if lam is None:
            return None
        tau = lifetime_from_wavelength(lam, self.emitter, self.cavity)
        m = m_from_wavelength(lam, self.emitter, self.cavity) * self.tuning.edge_factor(bias_mv)
        return replace(self.emitter, tau_ps=tau, m_intrinsic=m, lambda0_nm=lam)


@dataclass(frozen=True)
class TuningScenario:
    s1: TunableSource
    s2: TunableSource
    setup: InterferenceSetup = InterferenceSetup()
    window_ns: float = 4.0

    def point(self, v1: float, v2: float):
        """Emitter states and detuning (angular ns^-1) at one pair of biases."""
        e1, e2 = self.s1.emitter_at(v1), self.s2.emitter_at(v2)
        delta = 0.0
        if e1 is not None and e2 is not None:
            lam = 0.5 * (e1.lambda0_nm + e2.lambda0_nm)
            delta = float(pm_to_angular_per_ns((e1.lambda0_nm - e2.lambda0_nm) * 1e3, lam))
        return e1, e2, delta


@dataclass
class PointMeasurement:
    v1: float
    v2: float
    a_par: float  # normalised central areas
    a_perp: float
    v_rem: float
    m12: float
    m12_true: float
    active: tuple[bool, bool]
    stage: int = 0

    @property
    def has_signal(self) -> bool:
        return math.isfinite(self.v_rem)


@dataclass
class ScanResult:
    v1: np.ndarray
    v2: np.ndarray
    v_rem: np.ndarray
    a_par: np.ndarray
    a_perp: np.ndarray
    m12_true: np.ndarray
    active1: np.ndarray
    active2: np.ndarray
    dwell_s: float
    engine: str
    best: tuple[float, float, float] | None = None
    synthetic: bool = True

    def __post_init__(self):
        shape = (self.v1.size, self.v2.size)
        for name in ("v_rem", "a_par", "a_perp", "m12_true", "active1", "active2"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def empty(self) -> np.ndarray:
        """Points without any usable coincidences."""
        return ~np.isfinite(self.v_rem)


# --- one measurement ----------------------------------------------------------


def _twin_setups(setup: InterferenceSetup):
    return replace(setup, polarization="parallel"), replace(setup, polarization="orthogonal")


def measure_point(scenario: TuningScenario, v1: float, v2: float, dwell_s: float, engine: Engine = "counts",
                  seed: int = 0, key: tuple = ()) -> PointMeasurement:
    """Normalised central areas and V_rem at one bias pair.

    ``analytic`` returns expectation values; ``counts`` draws Poisson peak
    areas around them (a fast stand-in for a full acquisition with the same
    shot noise); ``pulse`` runs the pulse-level simulator and the correlator.
    """
    e1, e2, delta = scenario.point(v1, v2)
    active = (e1 is not None, e2 is not None)
    setup = scenario.setup
    base = e1 or e2 or scenario.s1.emitter
    e1, e2 = e1 or base, e2 or base
    m_true = pair_indistinguishability(e1, e2, delta) if all(active) else float("nan")
    pulses = int(round(dwell_s * setup.rep_rate_mhz * 1e6))
    par, perp = _twin_setups(setup)
    nan = float("nan")

    if not any(active):
        return PointMeasurement(v1, v2, nan, nan, nan, nan, m_true, active)

    if engine == "pulse":
        ratios = []
        for i, s in enumerate((par, perp)):
            stream = simulate_remote_hom(e1, e2, s, pulses=pulses, seed=_point_seed(seed, key, i), delta_per_ns=delta, active=active)
            try:
                rep = analysis.integrate_peaks(analysis.build_histogram(stream), scenario.window_ns)
            except ValueError:
                rep = None
            ratios.append(rep.normalized_central if rep is not None and rep.a_side_mean > 0 else nan)
    else:
        rng = substream(seed, _SCAN_STREAM, *key)
        ratios = []
        for s in (par, perp):
            c, side = expected_remote_areas(e1, e2, s, pulses, delta, active)
            if engine == "counts":
                c = rng.poisson(c)
                side = rng.poisson(side * N_SIDE_PEAKS) / N_SIDE_PEAKS
            ratios.append(c / side if side > 0 else nan)
        if engine not in ("analytic", "counts"):
            raise ValueError(f"unknown engine {engine!r}")
    a_par, a_perp = ratios
    v = 1.0 - a_par / a_perp if a_perp > 0 else nan
    m = analysis.correct_remote(v, setup.r_bs, setup.t_bs, e1.g2_zero, e2.g2_zero) if math.isfinite(v) else nan
    return PointMeasurement(v1, v2, a_par, a_perp, v, m, m_true, active)


def _point_seed(seed: int, key: tuple, pol: int) -> int:
    ss = np.random.SeedSequence(seed, spawn_key=(_SCAN_STREAM, *key, pol))
    return int(ss.generate_state(1, np.uint64)[0])


def _measure_grid(scenario, points, dwell_s, engine, seed, stage, workers):
    def one(args):
        i, (v1, v2) = args
        pm = measure_point(scenario, v1, v2, dwell_s, engine, seed, key=(stage, i))
        pm.stage = stage
        return pm

    items = list(enumerate(points))
    workers = workers or default_workers()
    if workers > 1 and engine == "pulse":
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, items))
    return [one(x) for x in items]


# --- scan ---------------------------------------------------------------------


def scan_map(scenario: TuningScenario, v1_list: Sequence[float], v2_list: Sequence[float], dwell_s: float = 1.0,
             engine: Engine = "counts", seed: int = 0, workers: int | None = None) -> ScanResult:
    v1 = np.asarray(v1_list, dtype=float)
    v2 = np.asarray(v2_list, dtype=float)
    if v1.size == 0 or v2.size == 0:
        raise ValueError("scan grids must be non-empty")
    points = [(a, b) for a in v1 for b in v2]
    res = _measure_grid(scenario, points, dwell_s, engine, seed, 0, workers)
    shape = (v1.size, v2.size)

    def grid(attr):
        return np.array([getattr(p, attr) for p in res], dtype=float).reshape(shape)

    out = ScanResult(
        v1, v2, grid("v_rem"), grid("a_par"), grid("a_perp"), grid("m12_true"),
        np.array([p.active[0] for p in res]).reshape(shape), np.array([p.active[1] for p in res]).reshape(shape),
        dwell_s, engine,
    )
    best = _select(res)
    out.best = None if best is None else (best.v1, best.v2, best.v_rem)
    return out


def _select(points: list[PointMeasurement]) -> PointMeasurement | None:
    """Highest V_rem; ties go to the lexicographically lowest (V1, V2)."""
    best = None
    for p in sorted(points, key=lambda p: (p.v1, p.v2)):
        if p.has_signal and (best is None or p.v_rem > best.v_rem):
            best = p
    return best


def stripe_locus(scenario: TuningScenario, v1) -> np.ndarray:
    """V2 at which the two emission wavelengths coincide, for each V1."""
    t1, t2 = scenario.s1.tuning, scenario.s2.tuning
    v1 = np.asarray(v1, dtype=float)
    # linear wavelength models, extended past the plateaus
    off1 = (scenario.s1.emitter.lambda0_nm - scenario.s2.emitter.lambda0_nm) * 1e3 \
        + t1.strain_pm_per_step * scenario.s1.strain_steps - t2.strain_pm_per_step * scenario.s2.strain_steps
    return t2.v_mid_mv + (t1.stark_pm_per_mv * (v1 - t1.v_mid_mv) + off1) / t2.stark_pm_per_mv


# --- optimiser ----------------------------------------------------------------


class NoSignalError(RuntimeError):
    pass


@dataclass
class OptimizeResult:
    v1: float
    v2: float
    v_rem: float
    m12: float
    m12_true: float
    confirm_v_rem: float
    confirm_m12: float
    audit: list[PointMeasurement] = field(repr=False, default_factory=list)


def _axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


def grid_refine_optimize(
    scenario: TuningScenario,
    v1_range: tuple[float, float],
    v2_range: tuple[float, float],
    step_schedule: Sequence[float] = (10.0, 1.0),
    dwell_s: float = 1.0,
    engine: Engine = "counts",
    seed: int = 0,
    workers: int | None = None,
) -> OptimizeResult:
    """Coarse-to-fine grid search maximising the measured V_rem.

    Stage 1 covers the full ranges; each later stage scans its own step over
    plus/minus the previous step around the previous optimum, clipped to the
    ranges.  The winning point is re-measured once with fresh noise.
    """
    steps = list(step_schedule)
    if not steps or any(b > a for a, b in zip(steps, steps[1:])) or min(steps) <= 0:
        raise ValueError("step_schedule must be positive and coarse to fine")
    (a1, b1), (a2, b2) = sorted(v1_range), sorted(v2_range)
    audit: list[PointMeasurement] = []
    best = None
    for stage, step in enumerate(steps):
        if stage == 0:
            ax1, ax2 = _axis(a1, b1, step), _axis(a2, b2, step)
        else:
            span = steps[stage - 1]
            ax1 = _axis(max(a1, best.v1 - span), min(b1, best.v1 + span), step)
            ax2 = _axis(max(a2, best.v2 - span), min(b2, best.v2 + span), step)
            ax1 = np.round(best.v1 + np.round((ax1 - best.v1) / step) * step, 9)
            ax2 = np.round(best.v2 + np.round((ax2 - best.v2) / step) * step, 9)
            ax1, ax2 = ax1[(ax1 >= a1) & (ax1 <= b1)], ax2[(ax2 >= a2) & (ax2 <= b2)]
        pts = [(x, y) for x in ax1 for y in ax2]
        res = _measure_grid(scenario, pts, dwell_s, engine, seed, stage, workers)
        audit.extend(res)
        stage_best = _select(res)
        if stage_best is None:
            if best is None:
                raise NoSignalError("no coincidences at any evaluated bias point")
            continue
        best = stage_best
    confirm = measure_point(scenario, best.v1, best.v2, dwell_s, engine, seed, key=(len(steps), 0))
    return OptimizeResult(best.v1, best.v2, best.v_rem, best.m12, best.m12_true, confirm.v_rem, confirm.m12, audit)


def analytic_optimum(scenario: TuningScenario, v1_range, v2_range, step: float = 1.0, band: int = 4) -> PointMeasurement:
    """Best true M12 on a fine grid, searched within ``band`` steps of the zero-detuning locus."""
    (a2, b2) = sorted(v2_range)
    pts = []
    for x in _axis(*sorted(v1_range), step):
        centre = a2 + step * round((float(stripe_locus(scenario, x)) - a2) / step)
        pts += [(x, y) for y in centre + step * np.arange(-band, band + 1) if a2 <= y <= b2]
    res = [measure_point(scenario, x, y, 1.0, "analytic") for x, y in pts]
    finite = [p for p in res if math.isfinite(p.m12_true)]
    if not finite:
        raise NoSignalError("no bias point with both sources active")
    return max(finite, key=lambda p: p.m12_true)
