"""Campaign configuration: typed dataclasses loaded from JSON with strict validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import MissingFile, SchemaViolation


@dataclass
class PopulationConfig:
    n_emitters: int = 37
    zpl_mu_nm: float = 1278.7
    zpl_sigma_nm: float = 1.1
    lifetime_mu_ns: float = 8.33
    lifetime_sigma_ns: float = 0.68
    i_inf_cps: float = 4753.0
    p_sat_uw: float = 7.6
    p_sat_pulsed_uw: float = 3.1
    lifetime_ns: float = 8.21

    _positive = ("n_emitters", "zpl_mu_nm", "zpl_sigma_nm", "lifetime_mu_ns", "lifetime_sigma_ns",
                 "p_sat_uw", "p_sat_pulsed_uw", "lifetime_ns")
    _nonneg = ("i_inf_cps",)


@dataclass
class ExcitationConfig:
    mode: str = "cw"
    powers_uw: list[float] = field(default_factory=lambda: [10.0])
    wavelength_nm: float = 532.0
    na: float = 0.55
    rep_rate_hz: float = 34e6
    duration_s: float = 10.0
    background_cps_per_uw: float = 30.0

    _positive = ("wavelength_nm", "na", "rep_rate_hz", "duration_s")
    _nonneg = ("powers_uw", "background_cps_per_uw")
    _choices = {"mode": ("cw", "pulsed")}


@dataclass
class DetectorConfig:
    name: str = "DET1"
    efficiency: float = 0.24
    jitter_fwhm_ps: float = 165.0
    dark_rate_cps: float = 100.0
    dead_time_ps: float = 0.0

    _nonneg = ("efficiency", "jitter_fwhm_ps", "dark_rate_cps", "dead_time_ps")
    _unit = ("efficiency",)


@dataclass
class BudgetFactor:
    name: str
    factor: float

    _unit = ("factor",)


@dataclass
class AnalysisConfig:
    bin_width_ps: float = 300.0
    max_delay_ps: float = 100_000.0
    lifetime_bin_ps: float = 100.0
    clip_ns: list[float] = field(default_factory=lambda: [1.0, 12.5])
    stability_bin_s: float = 0.01
    alpha: float = 0.01
    normalize_g2: bool = False

    _positive = ("bin_width_ps", "max_delay_ps", "lifetime_bin_ps", "stability_bin_s", "alpha")
    _nonneg = ("clip_ns",)


@dataclass
class CampaignConfig:
    seeds: dict[str, int]
    population: PopulationConfig = field(default_factory=PopulationConfig)
    excitation: ExcitationConfig = field(default_factory=ExcitationConfig)
    detectors: list[DetectorConfig] = field(default_factory=lambda: [
        DetectorConfig("DET1", 0.24, 165.0), DetectorConfig("DET2", 0.21, 172.0)])
    budget: list[BudgetFactor] = field(default_factory=list)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    timetag_files: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]

    def seed(self, name: str) -> int:
        if name not in self.seeds:
            raise SchemaViolation(f"seeds.{name}", "no seed given for this step")
        return self.seeds[name]


def _is_dataclass_type(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def _convert(value, tp, path: str):
    origin = typing.get_origin(tp)
    if _is_dataclass_type(tp):
        return _build(tp, value, path)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _convert(value, args[0], path)
    if origin is list:
        if not isinstance(value, list):
            raise SchemaViolation(path, "expected a list")
        (item,) = typing.get_args(tp)
        return [_convert(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise SchemaViolation(path, "expected an object")
        _, val_tp = typing.get_args(tp)
        return {str(k): _convert(v, val_tp, f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise SchemaViolation(path, "expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaViolation(path, "expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaViolation(path, "expected a number")
        if not math.isfinite(value):
            raise SchemaViolation(path, "must be finite")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise SchemaViolation(path, "expected a string")
        return value
    raise SchemaViolation(path, f"unsupported type {tp}")


def _values(v):
    return v if isinstance(v, list) else [v]


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise SchemaViolation(path or "<root>", "expected an object")
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    prefix = f"{path}." if path else ""
    for key in data:
        if key not in names:
            raise SchemaViolation(f"{prefix}{key}", "unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            if f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
                raise SchemaViolation(f"{prefix}{f.name}", "required field missing")
            continue
        kwargs[f.name] = _convert(data[f.name], hints[f.name], f"{prefix}{f.name}")
    for name in getattr(cls, "_positive", ()):
        if name in kwargs and any(v <= 0 for v in _values(kwargs[name])):
            raise SchemaViolation(f"{prefix}{name}", "must be > 0")
    for name in getattr(cls, "_nonneg", ()):
        if name in kwargs and any(v < 0 for v in _values(kwargs[name])):
            raise SchemaViolation(f"{prefix}{name}", "must be >= 0")
    for name in getattr(cls, "_unit", ()):
        if name in kwargs and not 0 <= kwargs[name] <= 1:
            raise SchemaViolation(f"{prefix}{name}", "must lie in [0, 1]")
    for name, allowed in getattr(cls, "_choices", {}).items():
        if name in kwargs and kwargs[name] not in allowed:
            raise SchemaViolation(f"{prefix}{name}", f"must be one of {allowed}")
    return cls(**kwargs)


def config_from_dict(data: dict, base_dir: Path | None = None) -> CampaignConfig:
    cfg = _build(CampaignConfig, data, "")
    for name, seed in cfg.seeds.items():
        if seed < 0:
            raise SchemaViolation(f"seeds.{name}", "must be >= 0")
    clip = cfg.analysis.clip_ns
    if len(clip) != 2 or not clip[0] < clip[1]:
        raise SchemaViolation("analysis.clip_ns", "expected [start, end] with start < end")
    for i, f in enumerate(cfg.timetag_files):
        p = Path(f)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise MissingFile(f"timetag_files[{i}]: {p} does not exist")
    return cfg


def load_config(path) -> CampaignConfig:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path} does not exist")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaViolation("<root>", f"invalid JSON: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)


def save_config(cfg: CampaignConfig, path) -> None:
    Path(path).write_text(cfg.to_json())


DEFAULT_SEEDS = {"saturation": 101, "g2": 202, "lifetime": 303, "inhomogeneous": 404,
                 "stability": 505, "kinetics": 606, "trim": 707}


def default_config() -> CampaignConfig:
    return CampaignConfig(seeds=dict(DEFAULT_SEEDS))
