"""Run configuration: defaults, YAML loading and command-line overrides.

Precedence is defaults < config file < command-line flags.  Unknown keys are
rejected at every nesting level so a typo never silently falls back to a
default.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import feeder, linescan, theft
from .pipeline import MiningConfig
from .profilegen import (
    DEFAULT_APPLIANCES,
    ApplianceSpec,
    HorizonCalendar,
    JitterModel,
)


class ConfigError(ValueError):
    pass


def _default_mix() -> dict[int, float]:
    return {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0, 5: 1.0, 6: 0.15, 7: 0.1}


@dataclass
class PopulationConfig:
    n_residential: int = 1000
    n_commercial: int = 100
    scenario_mix: dict[int, float] = field(default_factory=_default_mix)
    # None keeps the built-in catalogue; otherwise a list of appliance mappings
    appliances: list[dict] | None = None
    jitter: dict[str, float] | None = None


@dataclass
class TopologyConfig:
    lines: int = 30
    length_range: tuple[float, float] = (250.0, 300.0)
    r_per_km: float = feeder.R_ACSR50
    x_per_km: float = feeder.X_ACSR50
    v_nominal: float = feeder.V_NOMINAL
    loss_noise: float = 0.0


@dataclass
class TheftConfig:
    # thieves per scenario, drawn among residential consumers of scenarios 1-5
    counts: dict[int, int] = field(default_factory=lambda: {2: 50, 4: 50})
    theta: float = 0.65
    rho: float = 0.6
    onset_day: int = theft.DEFAULT_ONSET_DAY
    line: int | None = None  # restrict thieves to one line
    # explicit assignment mappings; when given, ``counts`` is ignored
    assignments: list[dict] | None = None


@dataclass
class SweepConfig:
    scenarios: list[int] = field(default_factory=lambda: [2, 4])
    severities: list[float] = field(default_factory=lambda: list(theft.SEVERITY_GRID))
    repetitions: int = 3
    thief_fraction: float = 0.1


@dataclass
class RunConfig:
    master_seed: int = 42
    out: str = "out"
    algorithm: str = "both"
    noise_floor: float = linescan.DEFAULT_NOISE_FLOOR
    calendar: HorizonCalendar = field(default_factory=HorizonCalendar)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    theft: TheftConfig = field(default_factory=TheftConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.algorithm not in ("meanshift", "dbscan", "both"):
            raise ConfigError(f"algorithm must be meanshift, dbscan or both, got {self.algorithm!r}")

    @property
    def algorithms(self) -> tuple[str, ...]:
        return ("meanshift", "dbscan") if self.algorithm == "both" else (self.algorithm,)

    def appliances(self) -> tuple[ApplianceSpec, ...]:
        if self.population.appliances is None:
            return DEFAULT_APPLIANCES
        return tuple(ApplianceSpec(**a) for a in self.population.appliances)

    def jitter(self) -> JitterModel:
        from .profilegen import DEFAULT_JITTER

        if self.population.jitter is None:
            return DEFAULT_JITTER
        return JitterModel(**self.population.jitter)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is typing.Union or str(origin) == "types.UnionType":
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(_coerce(args[0], v, where) for v in value)
    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return [_coerce(args[0], v, where) if args else v for v in value]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a mapping")
        kt, vt = args if args else (Any, Any)
        return {_coerce(kt, k, where): _coerce(vt, v, where) for k, v in value.items()}
    if tp in (int, float, str, bool):
        if tp is bool and not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        if tp is int and isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        try:
            return tp(value)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return value


def _build(cls, data, where: str = "config"):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from None


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the YAML file at ``path``, then ``overrides``."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    if overrides:
        data = _merge(data, overrides)
    return _build(RunConfig, data)


def dump_config(cfg: RunConfig, exclude: tuple[str, ...] = ()) -> str:
    data = {k: v for k, v in cfg.to_dict().items() if k not in exclude}
    return yaml.safe_dump(data, sort_keys=False)
