"""Slow spectral noise: Gaussian detuning statistics and resonance-fluorescence counts.

Detunings and linewidths only need to share a unit; the package default is
angular ns^-1 with the natural linewidth 1/tau as the Lorentzian FWHM of the
fluorescence intensity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, special, stats

from .physics import lorentzian

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)
_TAIL = 8.5  # quadrature half-range in standard deviations


@dataclass(frozen=True)
class NoiseProcess:
    sigma: float = 0.0
    mu: float = 0.0
    corr_time_us: float = 1000.0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not self.corr_time_us > 0:
            raise ValueError(f"corr_time_us must be > 0, got {self.corr_time_us}")


@dataclass
class RfTrace:
    bin_us: float
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if not self.bin_us > 0:
            raise ValueError(f"bin_us must be > 0, got {self.bin_us}")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("counts must be non-negative")

    @property
    def mean_rate(self) -> float:
        return float(self.counts.mean()) if self.counts.size else 0.0

    def __len__(self):
        return self.counts.size


@dataclass(frozen=True)
class NoiseFit:
    sigma_hat: float
    mu_hat: float
    m_max_hat: float
    linewidth_hat: float
    log_likelihood: float
    converged: bool
    n_evaluations: int = 0


def detuning_pdf(process: NoiseProcess, delta):
    if process.sigma == 0:
        raise ValueError("degenerate detuning distribution (sigma = 0)")
    return stats.norm.pdf(delta, loc=process.mu, scale=process.sigma)


def mean_rate(delta, m_max: float, linewidth_fwhm: float):
    """Mean counts per bin at detuning ``delta``: a Lorentzian of FWHM ``linewidth_fwhm``."""
    return m_max * lorentzian(delta, linewidth_fwhm)


def _quadrature(process: NoiseProcess, m_max: float, linewidth: float, sqrt_step: float):
    """Nodes and weights in detuning for averaging smooth functions of the Poisson mean.

    Panels are split both uniformly and wherever sqrt(m) advances by
    ``sqrt_step``, so a Poisson kernel (width 1/2 in sqrt(m)) is always
    resolved no matter how large ``m_max`` is.
    """
    mu, sigma = process.mu, process.sigma
    a, b = mu - _TAIL * sigma, mu + _TAIL * sigma
    edges = [np.linspace(a, b, 201)]
    half = 0.5 * linewidth
    s_max = math.sqrt(m_max)
    for sign, lo, hi in ((1.0, max(a, 0.0), b), (-1.0, max(-b, 0.0), -a)):
        # each flank of the Lorentzian, in |delta|
        if hi <= lo:
            continue
        s_top = math.sqrt(mean_rate(lo, m_max, linewidth))
        s_bot = math.sqrt(mean_rate(hi, m_max, linewidth))
        n = int((s_top - s_bot) / sqrt_step)
        if n < 1:
            continue
        s = np.linspace(s_bot, s_top, n + 2)[1:-1]
        edges.append(sign * half * np.sqrt(np.maximum(s_max**2 / s**2 - 1.0, 0.0)))
    e = np.unique(np.concatenate(edges))
    e = e[(e >= a) & (e <= b)]
    mid, rad = 0.5 * (e[1:] + e[:-1]), 0.5 * (e[1:] - e[:-1])
    nodes = (mid[:, None] + rad[:, None] * _GL_NODES[None, :]).ravel()
    weights = (rad[:, None] * _GL_WEIGHTS[None, :]).ravel()
    weights = weights * stats.norm.pdf(nodes, loc=mu, scale=sigma)
    return nodes, weights


def intensity_pmf(process: NoiseProcess, m_max: float, linewidth: float, k):
    """Probability of ``k`` counts per bin for a Gaussian-weighted Poisson mixture."""
    k = np.asarray(k)
    if process.sigma == 0:
        return stats.poisson.pmf(k, mean_rate(process.mu, m_max, linewidth))
    nodes, weights = _quadrature(process, m_max, linewidth, sqrt_step=0.1)
    m = mean_rate(nodes, m_max, linewidth)
    flat = np.atleast_1d(k).ravel()
    out = stats.poisson.pmf(flat[:, None], m[None, :]) @ weights
    return out.reshape(k.shape) if k.ndim else float(out[0])


def pmf_moments(process: NoiseProcess, m_max: float, linewidth: float) -> tuple[float, float]:
    """Mean and variance of the count distribution (law of total variance)."""
    if process.sigma == 0:
        m = float(mean_rate(process.mu, m_max, linewidth))
        return m, m
    nodes, weights = _quadrature(process, m_max, linewidth, sqrt_step=0.1)
    m = mean_rate(nodes, m_max, linewidth)
    mean = float(weights @ m)
    return mean, float(weights @ m + weights @ (m - mean) ** 2)


def ou_path(n: int, dt_us: float, process: NoiseProcess, rng: np.random.Generator) -> np.ndarray:
    """Stationary mean-reverting Gaussian samples at spacing ``dt_us``."""
    if process.sigma == 0:
        return np.full(n, process.mu)
    rho = math.exp(-dt_us / process.corr_time_us)
    xi = rng.standard_normal(n)
    x0 = xi[0] * process.sigma
    drive = xi * (process.sigma * math.sqrt(1.0 - rho * rho))
    drive[0] = 0.0
    x, _ = signal.lfilter([1.0], [1.0, -rho], drive, zi=[rho * x0])
    x[0] = x0
    return process.mu + x


def simulate_rf_trace(
    process: NoiseProcess,
    m_max: float,
    linewidth: float,
    duration_s: float,
    bin_us: float = 100.0,
    seed: int = 0,
) -> RfTrace:
    """Resonance-fluorescence counts per bin under slow Gaussian detuning noise."""
    n = int(round(duration_s * 1e6 / bin_us))
    rng = np.random.default_rng(seed)
    delta = ou_path(n, bin_us, process, rng)
    return RfTrace(bin_us=bin_us, counts=rng.poisson(mean_rate(delta, m_max, linewidth)))


class _BinnedCounts:
    """Count histogram grouped into contiguous classes for a multinomial likelihood."""

    def __init__(self, counts: np.ndarray, max_classes: int = 128):
        lo, hi = int(counts.min()), int(counts.max())
        width = max(1, math.ceil((hi - lo + 1) / max_classes))
        self.lower = np.arange(lo, hi + 1, width)
        self.upper = np.append(self.lower[1:] - 1, hi)
        idx = (counts - lo) // width
        self.n = np.bincount(idx, minlength=self.lower.size).astype(float)
        # open tails so class probabilities sum to one
        self.cdf_edges = self.upper[:-1]

    def class_probabilities(self, process: NoiseProcess, m_max: float, linewidth: float) -> np.ndarray:
        if process.sigma == 0:
            m = np.array([mean_rate(process.mu, m_max, linewidth)])
            w = np.ones(1)
        else:
            nodes, w = _quadrature(process, m_max, linewidth, sqrt_step=0.5)
            m = mean_rate(nodes, m_max, linewidth)
        cdf = w @ special.pdtr(self.cdf_edges[None, :], m[:, None])
        cdf = np.concatenate(([0.0], cdf, [w.sum()]))
        return np.diff(cdf)

    def log_likelihood(self, process, m_max, linewidth) -> float:
        p = np.maximum(self.class_probabilities(process, m_max, linewidth), 1e-300)
        return float(self.n @ np.log(p))


def fit_noise(
    trace: RfTrace,
    linewidth: float = 1.0,
    fit_mu: bool = False,
    max_classes: int = 128,
    maxiter: int = 400,
) -> NoiseFit:
    """Maximum-likelihood estimate of the detuning noise behind an RF trace.

    Only ratios of detuning to linewidth are identifiable from intensity
    statistics, so ``linewidth`` is held fixed and ``sigma_hat``/``mu_hat``
    come out in its units.  With ``fit_mu=False`` the laser is assumed to sit
    on the mean resonance.
    """
    counts = trace.counts
    if counts.size < 2:
        raise ValueError("trace too short to fit")
    binned = _BinnedCounts(counts, max_classes)
    mean, var = counts.mean(), counts.var()

    # moment start: m ~ M (1 - eps u^2) with eps = 4 (sigma/w)^2
    excess = max(var - mean, 0.0)
    eps = math.sqrt(excess / 2.0) / max(mean, 1e-12)
    s0 = max(0.5 * math.sqrt(eps), 1e-3)
    m0 = max(mean * (1.0 + eps), 1e-3)

    def unpack(theta):
        s = abs(theta[0])
        m_max = math.exp(theta[1])
        mu = theta[2] if fit_mu else 0.0
        return s, m_max, mu

    def nll(theta):
        s, m_max, mu = unpack(theta)
        return -binned.log_likelihood(NoiseProcess(sigma=s * linewidth, mu=mu * linewidth), m_max, linewidth)

    x0 = [s0, math.log(m0)] + ([0.1 * s0] if fit_mu else [])
    res = optimize.minimize(
        nll, x0, method="Nelder-Mead",
        options={"maxiter": maxiter, "xatol": 1e-5, "fatol": 1e-3, "initial_simplex": _simplex(x0)},
    )
    theta, fun, converged, nfev = res.x, res.fun, bool(res.success), res.nfev

    # the shot-noise-only model sits on the boundary; compare explicitly
    p_zero = [0.0, math.log(mean)] + ([0.0] if fit_mu else [])
    if nll(p_zero) <= fun:
        theta, fun = np.array(p_zero), nll(p_zero)

    if not converged:
        theta, fun, converged, nfev = _least_squares_fallback(binned, theta, linewidth, fit_mu, unpack, nll, nfev)

    s, m_max, mu = unpack(theta)
    return NoiseFit(
        sigma_hat=s * linewidth,
        mu_hat=mu * linewidth,
        m_max_hat=m_max,
        linewidth_hat=linewidth,
        log_likelihood=-fun,
        converged=converged,
        n_evaluations=nfev,
    )


def _simplex(x0):
    x0 = np.asarray(x0, float)
    steps = [max(abs(x0[0]), 0.01), 0.02] + ([max(abs(x0[0]), 0.01)] if x0.size > 2 else [])
    return np.vstack([x0] + [x0 + np.eye(x0.size)[i] * steps[i] for i in range(x0.size)])


def _least_squares_fallback(binned, theta, linewidth, fit_mu, unpack, nll, nfev):
    total = binned.n.sum()

    def resid(t):
        s, m_max, mu = unpack(t)
        p = binned.class_probabilities(NoiseProcess(sigma=s * linewidth, mu=mu * linewidth), m_max, linewidth)
        return (binned.n - total * p) / np.sqrt(np.maximum(binned.n, 1.0))

    out = optimize.least_squares(resid, theta, max_nfev=200)
    return out.x, nll(out.x), bool(out.success), nfev + out.nfev
