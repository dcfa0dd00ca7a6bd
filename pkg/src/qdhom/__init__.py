"""Simulation and analysis of two-photon interference between remote quantum-dot sources."""

from .analysis import (
    CorrelationHistogram,
    PeakReport,
    VisibilityReport,
    build_histogram,
    correct_remote,
    correct_single,
    g2_extract,
    integrate_peaks,
    sanity_checks,
    vhom,
    vrem,
)
from .noise import NoiseFit, NoiseProcess, RfTrace, fit_noise, intensity_pmf, simulate_rf_trace
from .physics import (
    CavitySpec,
    EmitterSpec,
    PairState,
    mutual_indistinguishability,
    noise_averaged_m12,
    purcell_lifetime,
    temporal_overlap,
    upper_bound,
)
from .simulate import BlinkModel, InterferenceSetup, TimeTagStream, simulate_remote_hom, simulate_single_hom

__version__ = "0.1.0"
