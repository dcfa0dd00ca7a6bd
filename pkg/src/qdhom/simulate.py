"""Pulse-level Monte Carlo of single-source (MZI) and two-source HOM experiments.

Every photon that reaches the final beamsplitter is an event tagged with the
time slot (laser pulse index at the splitter), input port and whether it is a
"main" single photon or a multi-photon contaminant.  Two main photons meeting
in the same slot on opposite ports are routed jointly using the coincidence
probability ``R^2 + T^2 - 2RT m``; everything else is routed independently.

Randomness: all draws come from counter-based substreams of one master seed,
``SeedSequence(seed, spawn_key=(stream, index))``, with fixed block sizes, so
the output does not depend on how many worker threads are used.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from .noise import NoiseProcess, ou_path
from .physics import EmitterSpec, mutual_indistinguishability

BLOCK_PULSES = 1 << 20
START_PS = 10_000  # keeps jittered stamps of the first pulse non-negative

# substream ids
_EMISSION, _NOISE, _BLINK = 0, 1, 2

Polarization = Literal["parallel", "orthogonal"]


@dataclass(frozen=True)
class InterferenceSetup:
    rep_rate_mhz: float = 79.3
    mzi_delay_ns: float = 12.6
    r_bs: float = 0.5
    t_bs: float = 0.5
    det_efficiency: float = 0.31
    det_jitter_ps: float = 20.0
    polarization: Polarization = "parallel"
    brightness_1: float = 0.061
    brightness_2: float = 0.061
    mzi_split: float = 0.5  # long-arm probability at the first MZI splitter
    dead_time_ns: float = 0.0  # 0 disables; otherwise paralyzable

    def __post_init__(self):
        if not (0 <= self.r_bs <= 1 and 0 <= self.t_bs <= 1):
            raise ValueError("r_bs and t_bs must lie in [0, 1]")
        if abs(self.r_bs + self.t_bs - 1.0) > 1e-9:
            raise ValueError(f"r_bs + t_bs must equal 1, got {self.r_bs + self.t_bs}")
        if not 0 < self.det_efficiency <= 1:
            raise ValueError(f"det_efficiency must lie in (0, 1], got {self.det_efficiency}")
        for name in ("brightness_1", "brightness_2", "mzi_split"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not self.rep_rate_mhz > 0:
            raise ValueError("rep_rate_mhz must be > 0")
        if self.det_jitter_ps < 0 or self.dead_time_ns < 0:
            raise ValueError("det_jitter_ps and dead_time_ns must be >= 0")
        if self.polarization not in ("parallel", "orthogonal"):
            raise ValueError(f"polarization must be 'parallel' or 'orthogonal', got {self.polarization!r}")

    @property
    def period_ps(self) -> float:
        return 1e6 / self.rep_rate_mhz


@dataclass(frozen=True)
class BlinkModel:
    """Two-state telegraph gating of a source.

    ``switch_time_us`` is the mean dwell per state at ``on_fraction = 0.5``;
    in general the on and off dwells are ``2 f t`` and ``2 (1 - f) t``.
    """

    enabled: bool = False
    on_fraction: float = 1.0
    switch_time_us: float = 1.0

    def __post_init__(self):
        if not 0 < self.on_fraction <= 1:
            raise ValueError(f"on_fraction must lie in (0, 1], got {self.on_fraction}")
        if not self.switch_time_us > 0:
            raise ValueError(f"switch_time_us must be > 0, got {self.switch_time_us}")

    @property
    def active(self) -> bool:
        return self.enabled and self.on_fraction < 1

    @property
    def mean_on_us(self) -> float:
        return 2 * self.on_fraction * self.switch_time_us

    @property
    def mean_off_us(self) -> float:
        return 2 * (1 - self.on_fraction) * self.switch_time_us

    @property
    def correlation_time_us(self) -> float:
        return 1.0 / (1.0 / self.mean_on_us + 1.0 / self.mean_off_us)


@dataclass
class TimeTagStream:
    channels: np.ndarray = field(repr=False)
    timestamps: np.ndarray = field(repr=False)
    duration_ps: int = 0
    seed: int = 0
    period_ps: float | None = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.uint8)
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.channels.shape != self.timestamps.shape:
            raise ValueError("channels and timestamps must have equal length")

    def __len__(self):
        return self.timestamps.size

    def channel(self, ch: int) -> np.ndarray:
        return self.timestamps[self.channels == ch]

    @property
    def records(self):
        return list(zip(self.channels.tolist(), self.timestamps.tolist()))


def substream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def default_workers() -> int:
    return max(1, int(os.environ.get("QDHOM_THREADS", "1")))


# --- calibration and closed-form expectations --------------------------------


def contaminant_probability(g2: float) -> float:
    """Per-pulse probability of an extra photon giving ``g2`` in an HBT measurement.

    A main photon and an independent contaminant with relative probability
    ``p`` (both subject to the same loss) give ``g2 = 2 p / (1 + p)^2``.
    """
    if not 0 <= g2 < 1:
        raise ValueError(f"g2 must lie in [0, 1), got {g2}")
    if g2 == 0:
        return 0.0
    return g2 / ((1 - g2) + math.sqrt(1 - 2 * g2))  # cancellation-free root


def central_coincidence_prob(m_inst, r_bs: float, t_bs: float):
    """Probability that one photon in each input port exits on opposite outputs."""
    return r_bs * r_bs + t_bs * t_bs - 2 * r_bs * t_bs * np.asarray(m_inst)


def pair_indistinguishability(e1: EmitterSpec, e2: EmitterSpec, delta_per_ns: float = 0.0, sigma_pair: float | None = None) -> float:
    """Two-photon indistinguishability averaged over independent Gaussian wander."""
    from scipy import integrate

    if sigma_pair is None:
        sigma_pair = math.hypot(e1.sigma_noise_per_ns, e2.sigma_noise_per_ns)
    if sigma_pair == 0:
        return float(mutual_indistinguishability(e1, e2, delta_per_ns))
    norm = 1.0 / (math.sqrt(2 * math.pi) * sigma_pair)

    def f(x):
        return mutual_indistinguishability(e1, e2, delta_per_ns + x) * norm * math.exp(-0.5 * (x / sigma_pair) ** 2)

    lim = 8.0 * sigma_pair
    val, _ = integrate.quad(f, -lim, lim, points=[-delta_per_ns] if abs(delta_per_ns) < lim else None, epsabs=0, epsrel=1e-10, limit=200)
    return val


def expected_remote_areas(
    e1: EmitterSpec,
    e2: EmitterSpec,
    setup: InterferenceSetup,
    pulses: float,
    delta_per_ns: float = 0.0,
    active: tuple[bool, bool] = (True, True),
    m_pair: float | None = None,
) -> tuple[float, float]:
    """Expected (central, side) coincidence counts per peak for the two-source setup."""
    R, T, eta = setup.r_bs, setup.t_bs, setup.det_efficiency
    b1 = setup.brightness_1 if active[0] else 0.0
    b2 = setup.brightness_2 if active[1] else 0.0
    q1 = contaminant_probability(e1.g2_zero) * b1
    q2 = contaminant_probability(e2.g2_zero) * b2
    if setup.polarization == "orthogonal":
        m = 0.0
    elif m_pair is not None:
        m = m_pair
    else:
        m = pair_indistinguishability(e1, e2, delta_per_ns)
    rt2 = R * R + T * T
    central = (
        b1 * b2 * float(central_coincidence_prob(m, R, T))
        + 2 * R * T * (b1 * q1 + b2 * q2)
        + rt2 * (b1 * q2 + q1 * b2 + q1 * q2)
    )
    d0 = T * (b1 + q1) + R * (b2 + q2)
    d1 = R * (b1 + q1) + T * (b2 + q2)
    return pulses * eta * eta * central, pulses * eta * eta * d0 * d1


def expected_click_rate_mhz(setup: InterferenceSetup, g2: tuple[float, float] = (0.0, 0.0)) -> tuple[float, float]:
    """Mean click rate per detector in the two-source configuration."""
    R, T, eta = setup.r_bs, setup.t_bs, setup.det_efficiency
    n1 = setup.brightness_1 * (1 + contaminant_probability(g2[0]))
    n2 = setup.brightness_2 * (1 + contaminant_probability(g2[1]))
    return (setup.rep_rate_mhz * eta * (T * n1 + R * n2), setup.rep_rate_mhz * eta * (R * n1 + T * n2))


# --- slow processes -----------------------------------------------------------


class _SlowDetuning:
    """Per-source detuning sampled on a grid much finer than its correlation time."""

    def __init__(self, emitter: EmitterSpec, n_pulses: int, period_ps: float, rng: np.random.Generator):
        self.sigma = emitter.sigma_noise_per_ns
        span_us = n_pulses * period_ps * 1e-6
        self.dt_us = min(emitter.noise_corr_time_us / 50.0, max(span_us, 1e-3))
        self.pulses_per_cell = self.dt_us / (period_ps * 1e-6)
        n_grid = int(span_us / self.dt_us) + 2
        proc = NoiseProcess(sigma=self.sigma, corr_time_us=emitter.noise_corr_time_us)
        self.grid = ou_path(n_grid, self.dt_us, proc, rng) if self.sigma > 0 else None

    def at(self, pulse: np.ndarray) -> np.ndarray | float:
        if self.grid is None:
            return 0.0
        return self.grid[(pulse / self.pulses_per_cell).astype(np.int64)]


class TelegraphProcess:
    """Continuous-time on/off switching sampled at arbitrary times (us)."""

    def __init__(self, blink: BlinkModel, span_us: float, rng: np.random.Generator):
        self.blink = blink
        if not blink.active:
            self.switches = None
            return
        self.start_on = bool(rng.random() < blink.on_fraction)
        first, second = (blink.mean_on_us, blink.mean_off_us) if self.start_on else (blink.mean_off_us, blink.mean_on_us)
        chunk = 2 * (int(span_us / (first + second)) + 8)
        means = np.tile([first, second], chunk // 2)
        parts, t = [], 0.0
        while t <= span_us:
            seg = t + np.cumsum(rng.exponential(1.0, chunk) * means)
            parts.append(seg)
            t = seg[-1]
        self.switches = np.concatenate(parts)

    def is_on(self, t_us: np.ndarray) -> np.ndarray:
        if self.switches is None:
            return np.ones(np.shape(t_us), dtype=bool)
        n_switched = np.searchsorted(self.switches, t_us, side="right")
        return (n_switched % 2 == 0) == self.start_on


def apply_blinking(blink: BlinkModel | None, n_pulses: int, period_ps: float, rng: np.random.Generator) -> TelegraphProcess:
    """Telegraph gate for one source; evaluate it with ``.is_on(pulse_times_us)``."""
    return TelegraphProcess(blink or BlinkModel(), n_pulses * period_ps * 1e-6 + 1.0, rng)


# --- photon events ------------------------------------------------------------


@dataclass
class _Photons:
    slot: np.ndarray
    port: np.ndarray
    main: np.ndarray
    pulse: np.ndarray
    delay_ps: np.ndarray
    u_route: np.ndarray
    u_split: np.ndarray
    u_det: np.ndarray
    jitter: np.ndarray

    @staticmethod
    def concat(parts: list["_Photons"]) -> "_Photons":
        parts = [p for p in parts if p is not None]
        if not parts:
            return _Photons.empty()
        return _Photons(*(np.concatenate([getattr(p, f) for p in parts]) for f in _Photons.__dataclass_fields__))

    @staticmethod
    def empty() -> "_Photons":
        return _Photons(*(np.empty(0, dt) for dt in (np.int64, np.int8, bool, np.int64, float, float, float, float, float)))

    def take(self, idx) -> "_Photons":
        return _Photons(*(getattr(self, f)[idx] for f in _Photons.__dataclass_fields__))

    def __len__(self):
        return self.slot.size


def _emit(rng, pulses, brightness, p_contam, gate, tau_ps, jitter_ps):
    """Main and contaminant photons of one source over a block of pulses."""
    n = pulses.size
    u_main = rng.random(n, dtype=np.float32)
    u_cont = rng.random(n, dtype=np.float32)
    on = gate.is_on(pulses * 1.0) if gate is not None else True
    main = (u_main < brightness) & on
    cont = (u_cont < brightness * p_contam) & on
    p_idx = np.concatenate([pulses[main], pulses[cont]])
    is_main = np.concatenate([np.ones(main.sum(), bool), np.zeros(cont.sum(), bool)])
    k = p_idx.size
    return p_idx, is_main, rng.exponential(tau_ps, k), rng.random((4, k)), rng.standard_normal(k) * jitter_ps


def _route(ph: _Photons, m_inst: Callable[[_Photons, np.ndarray, np.ndarray], np.ndarray], setup: InterferenceSetup, period_ps: float):
    """Send photons to detectors; returns (channel, timestamp) of detected clicks."""
    R, T = setup.r_bs, setup.t_bs
    n = len(ph)
    if n == 0:
        return np.empty(0, np.uint8), np.empty(0, np.int64)
    # independent routing: port 0 transmits to detector 0, port 1 to detector 1
    det = np.where(ph.u_route < T, ph.port, 1 - ph.port).astype(np.int8)

    main_idx = np.flatnonzero(ph.main)
    if main_idx.size:
        slots = ph.slot[main_idx]
        order = np.argsort(slots, kind="stable")
        main_idx, slots = main_idx[order], slots[order]
        same = np.flatnonzero(slots[1:] == slots[:-1])
        if same.size:
            a, b = main_idx[same], main_idx[same + 1]
            swap = ph.port[a] == 1
            a, b = np.where(swap, b, a), np.where(swap, a, b)  # a: port 0, b: port 1
            m = np.clip(m_inst(ph, a, b), 0.0, 1.0)
            pc = central_coincidence_prob(m, R, T)
            u = ph.u_route[a]
            coinc = u < pc
            both0 = (~coinc) & (u < pc + 0.5 * (1 - pc))
            straight = ph.u_split[a] < T * T / (T * T + R * R)
            det[a] = np.where(coinc, np.where(straight, 0, 1), np.where(both0, 0, 1))
            det[b] = np.where(coinc, np.where(straight, 1, 0), np.where(both0, 0, 1))

    hit = ph.u_det < setup.det_efficiency
    epoch = np.rint(ph.slot[hit] * period_ps).astype(np.int64)
    t = epoch + START_PS + np.rint(ph.delay_ps[hit] + ph.jitter[hit]).astype(np.int64)
    return det[hit].astype(np.uint8), np.maximum(t, 0)


def _finalize(chs, ts, setup, n_pulses, seed, period_ps) -> TimeTagStream:
    ch = np.concatenate(chs) if chs else np.empty(0, np.uint8)
    t = np.concatenate(ts) if ts else np.empty(0, np.int64)
    order = np.lexsort((ch, t))
    ch, t = ch[order], t[order]
    if setup.dead_time_ns > 0:
        keep = np.ones(t.size, bool)
        for c in (0, 1):
            idx = np.flatnonzero(ch == c)
            gaps = np.diff(t[idx])
            keep[idx[1:]] = gaps > setup.dead_time_ns * 1e3
        ch, t = ch[keep], t[keep]
    duration = int(round(n_pulses * period_ps)) + START_PS
    return TimeTagStream(ch, t, duration_ps=duration, seed=seed, period_ps=period_ps)


def _n_pulses(setup: InterferenceSetup, duration_s: float | None, pulses: int | None) -> int:
    if pulses is None:
        if duration_s is None:
            raise ValueError("give duration_s or pulses")
        pulses = int(round(duration_s * setup.rep_rate_mhz * 1e6))
    if pulses < 1:
        raise ValueError("simulation must span at least one repetition period")
    return int(pulses)


def _blocks(n_pulses: int):
    return [(k, k * BLOCK_PULSES, min(n_pulses, (k + 1) * BLOCK_PULSES)) for k in range((n_pulses + BLOCK_PULSES - 1) // BLOCK_PULSES)]


def _map(fn, items, workers):
    workers = workers or default_workers()
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def simulate_remote_hom(
    e1: EmitterSpec,
    e2: EmitterSpec,
    setup: InterferenceSetup,
    duration_s: float | None = None,
    seed: int = 0,
    *,
    pulses: int | None = None,
    delta_per_ns: float = 0.0,
    blink: BlinkModel | None = None,
    blocked: int | None = None,
    active: tuple[bool, bool] = (True, True),
    workers: int | None = None,
) -> TimeTagStream:
    """Two sources on the two input ports of one beamsplitter.

    ``delta_per_ns`` is a static spectral detuning between the emitters on top
    of their slow noise.  ``blocked`` (1 or 2) removes one input, turning the
    run into an autocorrelation of the other source.
    """
    n_pulses = _n_pulses(setup, duration_s, pulses)
    period = setup.period_ps
    noise = [_SlowDetuning(e, n_pulses, period, substream(seed, _NOISE, i)) for i, e in enumerate((e1, e2))]
    gates = [apply_blinking(blink, n_pulses, period, substream(seed, _BLINK, i)) for i in range(2)]
    period_us = period * 1e-6
    gate_fns = [_PulseGate(g, period_us) for g in gates]
    bright = [setup.brightness_1 if active[0] else 0.0, setup.brightness_2 if active[1] else 0.0]
    if blocked in (1, 2):
        bright[blocked - 1] = 0.0
    p_c = [contaminant_probability(e1.g2_zero), contaminant_probability(e2.g2_zero)]
    taus = [e1.tau_ps, e2.tau_ps]
    parallel = setup.polarization == "parallel"

    def m_inst(ph, a, b):
        if not parallel:
            return np.zeros(a.size)
        d = delta_per_ns + noise[0].at(ph.pulse[a]) - noise[1].at(ph.pulse[b])
        return np.broadcast_to(mutual_indistinguishability(e1, e2, d), a.shape)

    def run(block):
        k, j0, j1 = block
        rng = substream(seed, _EMISSION, k)
        pulses_arr = np.arange(j0, j1, dtype=np.int64)
        parts = []
        for src in range(2):
            p_idx, is_main, delay, u, jit = _emit(rng, pulses_arr, bright[src], p_c[src], gate_fns[src], taus[src], setup.det_jitter_ps)
            parts.append(_Photons(p_idx, np.full(p_idx.size, src, np.int8), is_main, p_idx, delay, u[0], u[1], u[2], jit))
        ph = _Photons.concat(parts)
        return _route(ph, m_inst, setup, period)

    out = _map(run, _blocks(n_pulses), workers)
    return _finalize([c for c, _ in out], [t for _, t in out], setup, n_pulses, seed, period)


class _PulseGate:
    def __init__(self, gate: TelegraphProcess, period_us: float):
        self.gate, self.period_us = gate, period_us

    def is_on(self, pulse_index: np.ndarray):
        if self.gate.switches is None:
            return True
        return self.gate.is_on(pulse_index * self.period_us)


def simulate_single_hom(
    e: EmitterSpec,
    setup: InterferenceSetup,
    duration_s: float | None = None,
    seed: int = 0,
    *,
    pulses: int | None = None,
    blink: BlinkModel | None = None,
    blocked: Literal["short", "long"] | None = None,
    bin_ps: float = 50.0,
    workers: int | None = None,
) -> TimeTagStream:
    """One source through an unbalanced Mach-Zehnder interferometer.

    The long arm delays photons by one repetition period so that photons from
    consecutive pulses meet at the second splitter (``r_bs``/``t_bs``).
    ``blocked`` removes one arm, which turns the run into an autocorrelation.
    """
    period = setup.period_ps
    mismatch = setup.mzi_delay_ns * 1e3 - period
    if abs(mismatch) > bin_ps:
        raise ValueError(
            f"MZI delay {setup.mzi_delay_ns} ns does not match the repetition period "
            f"{period / 1e3:.4f} ns within one {bin_ps} ps bin"
        )
    n_pulses = _n_pulses(setup, duration_s, pulses)
    noise = _SlowDetuning(e, n_pulses, period, substream(seed, _NOISE, 0))
    gate = _PulseGate(apply_blinking(blink, n_pulses, period, substream(seed, _BLINK, 0)), period * 1e-6)
    p_c = contaminant_probability(e.g2_zero)
    p_long = setup.mzi_split

    def m_inst(ph, a, b):
        d = noise.at(ph.pulse[a]) - noise.at(ph.pulse[b])
        return np.broadcast_to(mutual_indistinguishability(e, e, d), a.shape)

    def emit(block):
        k, j0, j1 = block
        rng = substream(seed, _EMISSION, k)
        pulses_arr = np.arange(j0, j1, dtype=np.int64)
        p_idx, is_main, delay, u, jit = _emit(rng, pulses_arr, setup.brightness_1, p_c, gate, e.tau_ps, setup.det_jitter_ps)
        long = u[3] < p_long
        keep = np.ones(p_idx.size, bool)
        if blocked == "long":
            keep = ~long
        elif blocked == "short":
            keep = long
        delay = delay + np.where(long, mismatch, 0.0)
        ph = _Photons(p_idx + long, long.astype(np.int8), is_main, p_idx, delay, u[0], u[1], u[2], jit)
        return ph.take(keep)

    blocks = _blocks(n_pulses)
    emitted = _map(emit, blocks, workers)
    chs, ts = [], []
    carry = _Photons.empty()
    for (k, j0, j1), ph in zip(blocks, emitted):
        ph = _Photons.concat([carry, ph])
        inside = ph.slot < j1
        c, t = _route(ph.take(inside), m_inst, setup, period)
        chs.append(c)
        ts.append(t)
        carry = ph.take(~inside)
    if len(carry):
        c, t = _route(carry, m_inst, setup, period)
        chs.append(c)
        ts.append(t)
    return _finalize(chs, ts, setup, n_pulses, seed, period)
