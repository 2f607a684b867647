"""Experiment configuration: nested dataclasses loaded from TOML with strict
field checking. Every error message names the offending field path."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

try:
    import tomllib as tomli
except ImportError:  # Python 3.10
    import tomli

from .control import ControlDefaults

PATTERNS = ("light", "bursty", "periodic", "diurnal", "skewed_zipf")
SCHEDULERS = ("round_robin", "midas")
CACHE_MODES = ("off", "lease", "ttl")
SERVICE_MODELS = ("constant", "exponential")
RR_SCOPES = ("session", "global")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ServiceConfig:
    model: str = "constant"
    mean_ms: float = 100.0

    def validate(self) -> list[str]:
        errs = []
        if self.model not in SERVICE_MODELS:
            errs.append(f"model: must be one of {SERVICE_MODELS} (got {self.model!r})")
        if self.mean_ms <= 0:
            errs.append("mean_ms: must be > 0")
        return errs


@dataclass(frozen=True)
class WorkloadSpec:
    pattern: str = "light"
    duration_s: float = 300.0
    base_rate: float = 20.0
    # bursty: square wave, rate x burst_amplitude for burst_len_s every burst_len_s + burst_gap_s
    burst_amplitude: float = 100.0
    burst_len_s: float = 2.0
    burst_gap_s: float = 28.0
    # periodic: sinusoid between base_rate and base_rate * peak_ratio
    period_s: float = 60.0
    peak_ratio: float = 4.0
    # diurnal: period of 24 units, trough at trough_ratio of the peak
    diurnal_unit_s: float = 10.0
    trough_ratio: float = 0.1
    zipf_s: float = 0.0
    key_universe: int = 10_000
    n_dirs: int = 64
    write_fraction: float = 0.05
    session_mean: float = 8.0
    concurrent_sessions: int = 16
    owner_bound_fraction: float = 0.0
    max_arrivals: Optional[int] = None

    def validate(self) -> list[str]:
        errs = []
        if self.pattern not in PATTERNS:
            errs.append(f"pattern: must be one of {PATTERNS} (got {self.pattern!r})")
        for name in ("duration_s", "base_rate", "burst_amplitude", "burst_len_s", "period_s",
                     "peak_ratio", "diurnal_unit_s", "session_mean"):
            if getattr(self, name) <= 0:
                errs.append(f"{name}: must be > 0")
        if self.burst_gap_s < 0:
            errs.append("burst_gap_s: must be >= 0")
        if not 0 < self.trough_ratio <= 1:
            errs.append("trough_ratio: must be in (0, 1]")
        if self.zipf_s < 0:
            errs.append(f"zipf_s: must be >= 0 (got {self.zipf_s})")
        if self.key_universe < 1 or self.n_dirs < 1:
            errs.append("key_universe/n_dirs: must be >= 1")
        for name in ("write_fraction", "owner_bound_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                errs.append(f"{name}: must be in [0, 1] (got {getattr(self, name)})")
        if self.concurrent_sessions < 1:
            errs.append("concurrent_sessions: must be >= 1")
        if self.session_mean < 1:
            errs.append("session_mean: must be >= 1")
        if self.max_arrivals is not None and self.max_arrivals < 1:
            errs.append("max_arrivals: must be >= 1")
        return errs


@dataclass(frozen=True)
class RoutingConfig:
    vnodes_per_server: int = 64
    feasible_size: int = 4
    rr_scope: str = "session"

    def validate(self) -> list[str]:
        errs = []
        if self.vnodes_per_server < 1:
            errs.append("vnodes_per_server: must be >= 1")
        if self.feasible_size < 1:
            errs.append("feasible_size: must be >= 1")
        if self.rr_scope not in RR_SCOPES:
            errs.append(f"rr_scope: must be one of {RR_SCOPES} (got {self.rr_scope!r})")
        return errs


@dataclass(frozen=True)
class CacheConfig:
    mode: str = "lease"
    capacity: int = 64 * 1024
    lease_ms: float = 30_000.0
    prefix_depth: int = 1
    hit_ms: float = 0.1

    def validate(self) -> list[str]:
        errs = []
        if self.mode not in CACHE_MODES:
            errs.append(f"mode: must be one of {CACHE_MODES} (got {self.mode!r})")
        if self.capacity < 1:
            errs.append("capacity: must be >= 1")
        if self.lease_ms <= 0 or self.hit_ms < 0:
            errs.append("lease_ms/hit_ms: must be positive")
        if self.prefix_depth < 1:
            errs.append("prefix_depth: must be >= 1")
        return errs


@dataclass(frozen=True)
class WarmupConfig:
    duration_s: float = 60.0
    utilization_cap: float = 0.30

    def validate(self) -> list[str]:
        errs = []
        if self.duration_s <= 0:
            errs.append("duration_s: must be > 0")
        if not 0 < self.utilization_cap <= 1:
            errs.append("utilization_cap: must be in (0, 1]")
        return errs


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    seed: Optional[int] = None
    m: int = 8
    scheduler: str = "midas"
    proxies: int = 1
    rtt_ms: float = 1.0
    # abort the run on the first steer that would not lower the potential
    strict_invariants: bool = True
    service: ServiceConfig = field(default_factory=ServiceConfig)
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    cache: CacheConfig = field(default_factory=CacheConfig)
    warmup: WarmupConfig = field(default_factory=WarmupConfig)
    control: ControlDefaults = field(default_factory=ControlDefaults)

    def validate(self) -> list[str]:
        errs = []
        if self.m < 1:
            errs.append(f"m: must be >= 1 (got {self.m})")
        if self.scheduler not in SCHEDULERS:
            errs.append(f"scheduler: must be one of {SCHEDULERS} (got {self.scheduler!r})")
        if self.proxies < 1:
            errs.append("proxies: must be >= 1")
        if self.rtt_ms < 0:
            errs.append("rtt_ms: must be >= 0")
        for section in ("service", "workload", "routing", "cache", "warmup", "control"):
            errs += [f"{section}.{e}" for e in getattr(self, section).validate()]
        ctl = self.control
        if ctl.C_ms < self.rtt_ms or ctl.C_ms < ctl.T_fast_ms:
            errs.append("control.C_ms: pin duration must be >= rtt_ms and >= T_fast_ms")
        return errs

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed)

    def replace(self, **kw: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _type_name(tp: Any) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value: Any, tp: Any, path: str, errors: list[str]) -> Any:
    origin = typing.get_origin(tp)
    if origin is Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path, errors)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            errors.append(f"{path}: expected a table")
            return None
        return _build(tp, value, path, errors)
    if tp is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected bool (got {value!r})")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected int (got {value!r})")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected number (got {value!r})")
            return value
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            errors.append(f"{path}: expected string (got {value!r})")
        return value
    raise TypeError(f"unsupported config type {_type_name(tp)} at {path}")


def _build(cls: type, data: dict, prefix: str, errors: list[str]) -> Any:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for k, v in data.items():
        path = f"{prefix}.{k}" if prefix else k
        if k not in names:
            errors.append(f"{path}: unknown field")
            continue
        kwargs[k] = _coerce(v, hints[k], path, errors)
    if errors:
        return None
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    errors: list[str] = []
    cfg = _build(ExperimentConfig, data, "", errors)
    if errors:
        raise ConfigError(errors)
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    p = Path(path)
    try:
        data = tomli.loads(p.read_text())
    except OSError as exc:
        raise ConfigError([f"{p}: cannot read ({exc.strerror})"]) from exc
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"{p}: invalid TOML ({exc})"]) from exc
    return config_from_dict(data)
