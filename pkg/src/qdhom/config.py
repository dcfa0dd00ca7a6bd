"""TOML run configuration with strict, path-aware validation."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .physics import CavitySpec, EmitterSpec
from .simulate import BlinkModel, InterferenceSetup
from .tuning import TunableSource, TuningModel, TuningScenario

MODES = ("single", "remote", "scan", "optimize", "rf-trace")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunSection:
    mode: str = "remote"
    duration_s: float | None = None
    pulses: int | None = 20_000_000
    seed: int = 0
    polarization: str = "parallel"
    delta_pm: float = 0.0
    blocked: str | None = None  # single: "short"/"long"; remote: "s1"/"s2"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.polarization not in ("parallel", "orthogonal", "both"):
            raise ValueError("polarization must be parallel, orthogonal or both")
        if self.duration_s is not None and not self.duration_s > 0:
            raise ValueError("duration_s must be > 0")
        if self.pulses is not None and self.pulses < 1:
            raise ValueError("pulses must be >= 1")
        if self.blocked not in (None, "short", "long", "s1", "s2"):
            raise ValueError("blocked must be short, long, s1 or s2")


@dataclass(frozen=True)
class AnalysisSection:
    bin_ps: int = 50
    range_ps: int = 7_000_000
    window_ns: float = 4.0
    exclude_first_side: bool = True
    n_side: int = 20

    def __post_init__(self):
        if self.bin_ps <= 0 or self.range_ps <= 0 or self.range_ps % self.bin_ps:
            raise ValueError("range_ps must be a positive multiple of bin_ps > 0")
        if not self.window_ns > 0 or self.n_side < 5:
            raise ValueError("window_ns must be > 0 and n_side >= 5")


@dataclass(frozen=True)
class ScanSection:
    v1_min_mv: float = 1100.0
    v1_max_mv: float = 1300.0
    v2_min_mv: float = 1100.0
    v2_max_mv: float = 1300.0
    step_mv: float = 10.0
    step_schedule_mv: tuple = (10.0, 1.0)
    dwell_s: float = 1.0
    engine: str = "counts"

    def __post_init__(self):
        object.__setattr__(self, "step_schedule_mv", tuple(float(s) for s in self.step_schedule_mv))
        if self.v1_max_mv < self.v1_min_mv or self.v2_max_mv < self.v2_min_mv:
            raise ValueError("scan ranges must have max >= min")
        if not self.step_mv > 0 or not self.dwell_s > 0:
            raise ValueError("step_mv and dwell_s must be > 0")
        if self.engine not in ("analytic", "counts", "pulse"):
            raise ValueError("engine must be analytic, counts or pulse")


@dataclass(frozen=True)
class RfSection:
    source: str = "s1"
    m_max: float = 1000.0
    bin_us: float = 100.0
    duration_s: float = 100.0

    def __post_init__(self):
        if self.source not in ("s1", "s2"):
            raise ValueError("source must be s1 or s2")
        if not (self.m_max > 0 and self.bin_us > 0 and self.duration_s > 0):
            raise ValueError("m_max, bin_us and duration_s must be > 0")


@dataclass(frozen=True)
class OutputSection:
    directory: str = "out"
    formats: tuple = ("pttg", "csv", "json")

    def __post_init__(self):
        object.__setattr__(self, "formats", tuple(self.formats))
        bad = set(self.formats) - {"pttg", "csv", "json"}
        if bad:
            raise ValueError(f"unknown output formats {sorted(bad)}")


@dataclass(frozen=True)
class RunConfig:
    s1: TunableSource = TunableSource(EmitterSpec())
    s2: TunableSource = TunableSource(EmitterSpec())
    setup: InterferenceSetup = InterferenceSetup()
    blink: BlinkModel = BlinkModel()
    run: RunSection = RunSection()
    analysis: AnalysisSection = AnalysisSection()
    scan: ScanSection = ScanSection()
    rf: RfSection = RfSection()
    output: OutputSection = OutputSection()

    def scenario(self) -> TuningScenario:
        return TuningScenario(self.s1, self.s2, self.setup, self.analysis.window_ns)

    def source(self, name: str) -> TunableSource:
        return {"s1": self.s1, "s2": self.s2}[name]


# --- parsing ------------------------------------------------------------------

_EMITTER_KEYS = {"tau_ps", "tau_bulk_ps", "m_intrinsic", "lambda0_nm", "g2_zero"}
_NOISE_KEYS = {"sigma_frac": "sigma_noise_frac", "corr_time_us": "noise_corr_time_us"}


def _check_type(value, annotation: str, path: str):
    ann = str(annotation)
    if "bool" in ann:
        ok = isinstance(value, bool)
    elif "tuple" in ann:
        ok = isinstance(value, list)
    elif "int" in ann and "float" not in ann:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif "float" in ann:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif "str" in ann:
        ok = isinstance(value, str)
    else:
        ok = True
    if not ok:
        raise ConfigError(f"{path}: expected {ann}, got {type(value).__name__}")


def _build(cls, table: dict, path: str, extra: dict | None = None):
    if not isinstance(table, dict):
        raise ConfigError(f"{path}: expected a table")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(extra or {})
    for key, value in table.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}: unknown key")
        _check_type(value, fields[key].type, f"{path}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _source(table: dict, path: str) -> TunableSource:
    if not isinstance(table, dict):
        raise ConfigError(f"{path}: expected a table")
    emitter_kw, sub = {}, {}
    strain = 0.0
    for key, value in table.items():
        if key in _EMITTER_KEYS:
            _check_type(value, "float", f"{path}.{key}")
            emitter_kw[key] = value
        elif key == "strain_steps":
            _check_type(value, "float", f"{path}.{key}")
            strain = value
        elif key in ("noise", "tuning", "cavity"):
            sub[key] = value
        else:
            raise ConfigError(f"{path}.{key}: unknown key")
    noise = sub.get("noise", {})
    if not isinstance(noise, dict):
        raise ConfigError(f"{path}.noise: expected a table")
    for key, value in noise.items():
        if key not in _NOISE_KEYS:
            raise ConfigError(f"{path}.noise.{key}: unknown key")
        _check_type(value, "float", f"{path}.noise.{key}")
        emitter_kw[_NOISE_KEYS[key]] = value
    try:
        emitter = EmitterSpec(**emitter_kw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    tuning = _build(TuningModel, sub.get("tuning", {}), f"{path}.tuning")
    cavity = _build(CavitySpec, sub.get("cavity", {}), f"{path}.cavity")
    return TunableSource(emitter, tuning, cavity, strain)


_SECTIONS = {
    "setup": InterferenceSetup,
    "blink": BlinkModel,
    "run": RunSection,
    "analysis": AnalysisSection,
    "scan": ScanSection,
    "rf": RfSection,
    "output": OutputSection,
}


def config_from_dict(doc: dict[str, Any]) -> RunConfig:
    kwargs = {}
    for key, value in doc.items():
        if key == "sources":
            if not isinstance(value, dict):
                raise ConfigError("sources: expected a table")
            for name, table in value.items():
                if name not in ("s1", "s2"):
                    raise ConfigError(f"sources.{name}: unknown key")
                kwargs[name] = _source(table, f"sources.{name}")
        elif key in _SECTIONS:
            kwargs[key] = _build(_SECTIONS[key], value, key)
        else:
            raise ConfigError(f"{key}: unknown key")
    return RunConfig(**kwargs)


def load_config(path: str | Path | None) -> RunConfig:
    """Load a TOML file; ``preset:NAME`` loads a bundled configuration."""
    if path is None:
        return RunConfig()
    text = preset_text(str(path)[7:]) if str(path).startswith("preset:") else None
    if text is None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc)


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("qdhom.presets").iterdir() if p.name.endswith(".toml"))


def preset_text(name: str) -> str:
    res = resources.files("qdhom.presets") / f"{name}.toml"
    if not res.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return res.read_text(encoding="utf-8")
