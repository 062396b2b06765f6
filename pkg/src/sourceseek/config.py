"""Scenario configuration: a strict YAML key-value tree mapped onto dataclasses.

Every section rejects unknown keys. ``ScenarioConfig.from_dict(cfg.to_dict())``
reproduces ``cfg`` exactly; see ``docs/config.md`` for the schema.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class GridConfig:
    side: int = 20


@dataclass
class AgentConfig:
    count: int = 3
    radius: float = 3.0
    # scalar, or one entry per agent
    noise_variance: Any = 4.0
    variance_bounds: list | None = None

    def variances(self) -> tuple[float, ...]:
        v = self.noise_variance
        if isinstance(v, (list, tuple)):
            if len(v) != self.count:
                raise ConfigError(f"{len(v)} noise variances for {self.count} agents")
            return tuple(float(x) for x in v)
        return (float(v),) * self.count


@dataclass
class DynamicsConfig:
    diffusion: float = 0.01
    velocity: list = field(default_factory=lambda: [0.0, 0.0])
    dt: float = 0.1
    renormalize: bool = True
    singular_floor: float = 1e-3
    # [lower, upper]; null takes the empirical bounds from verification
    alpha_bounds: list | None = None


@dataclass
class FieldConfig:
    # each entry: {row, col, magnitude}
    sources: list = field(default_factory=list)
    # text or .npy file with N values, row-major; overrides sources
    file: str | None = None
    background: float = 0.0


@dataclass
class DisturbanceConfig:
    type: str = "I"
    # none | decay | windows
    kind: str = "none"
    onset: int = 100
    windows: list = field(default_factory=list)
    cells: int = 2
    magnitude: list = field(default_factory=lambda: [1.0, 2.0])
    # uniform | near_sources | near_peak: cells whose grid distance to any
    # source (near_sources) or to the largest source (near_peak) lies in near_band
    placement: str = "uniform"
    near_band: list = field(default_factory=lambda: [2.0, 3.0])
    # envelope | zero | <number>
    budget_model: Any = "envelope"
    state_bound: float | None = None


@dataclass
class FilterConfig:
    # type1 | type2 | undiscounted
    mode: str = "type1"
    lambda_bar: float = 1.0
    gamma: float = 1.0
    # recursion | lifted
    engine: str = "recursion"
    # auto | standard | stable
    form: str = "auto"
    prior_mean: float = 0.1
    prior_variance: float = 25.0


@dataclass
class ConfidenceConfig:
    delta: float = 0.1
    c_beta: float = 1.0
    prior_error_bound: float | None = None


@dataclass
class VerifyConfig:
    enabled: bool = True
    samples: int = 200


@dataclass
class OutputConfig:
    dir: str = "runs"
    diagnostics: bool = False


@dataclass
class ScenarioConfig:
    name: str = "custom"
    grid: GridConfig = field(default_factory=GridConfig)
    horizon: int = 100
    agents: AgentConfig = field(default_factory=AgentConfig)
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    initial_field: FieldConfig = field(default_factory=FieldConfig)
    disturbance: DisturbanceConfig = field(default_factory=DisturbanceConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    trials: int = 1
    seed: int = 0
    rng: str = "philox"
    workers: int = 1
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        cfg = _build(cls, data, "")
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def dump(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"filter.gamma": 0.95})``."""
        data = self.to_dict()
        for key, value in changes.items():
            node = data
            *head, last = key.split(".")
            for part in head:
                node = node[part]
            if last not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[last] = value
        return ScenarioConfig.from_dict(data)

    def validate(self) -> None:
        n = self.grid.side ** 2
        if self.grid.side < 1:
            raise ConfigError("grid.side must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.agents.count < 1 or self.agents.count > n:
            raise ConfigError("agents.count must lie in [1, N]")
        self.agents.variances()
        if not 0.0 < self.confidence.delta < 1.0:
            raise ConfigError("confidence.delta must lie in (0, 1)")
        if not 0.0 < self.filter.gamma <= 1.0:
            raise ConfigError("filter.gamma must lie in (0, 1]")
        if self.filter.mode not in ("type1", "type2", "undiscounted"):
            raise ConfigError(f"unknown filter.mode {self.filter.mode!r}")
        if self.filter.engine not in ("recursion", "lifted"):
            raise ConfigError(f"unknown filter.engine {self.filter.engine!r}")
        if self.filter.form not in ("auto", "standard", "stable"):
            raise ConfigError(f"unknown filter.form {self.filter.form!r}")
        if self.disturbance.type not in ("I", "II"):
            raise ConfigError("disturbance.type must be 'I' or 'II'")
        if self.disturbance.kind not in ("none", "decay", "windows"):
            raise ConfigError(f"unknown disturbance.kind {self.disturbance.kind!r}")
        bm = self.disturbance.budget_model
        if not (bm in ("envelope", "zero") or (isinstance(bm, (int, float)) and not isinstance(bm, bool))):
            raise ConfigError("disturbance.budget_model must be 'envelope', 'zero' or a number")
        if self.disturbance.placement not in ("uniform", "near_sources", "near_peak"):
            raise ConfigError(f"unknown disturbance.placement {self.disturbance.placement!r}")
        if self.disturbance.placement != "uniform" and not self.initial_field.sources:
            raise ConfigError("near_* placement needs initial_field.sources")
        for w in self.disturbance.windows:
            if len(w) != 2 or not 0 <= w[0] <= w[1]:
                raise ConfigError(f"bad disturbance window {w!r}")
        for src in self.initial_field.sources:
            if set(src) != {"row", "col", "magnitude"}:
                raise ConfigError(f"source entries need exactly row, col, magnitude: {src!r}")
            if not (0 <= src["row"] < self.grid.side and 0 <= src["col"] < self.grid.side):
                raise ConfigError(f"source cell out of range: {src!r}")
        if self.rng != "philox":
            raise ConfigError("only the 'philox' generator family is supported")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(sorted(unknown))}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        path = f"{where}.{f.name}" if where else f.name
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value, path)
        elif hint is int and not isinstance(value, bool):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            if not isinstance(value, int):
                raise ConfigError(f"{path}: expected an integer")
        elif hint is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        kwargs[f.name] = value
    return cls(**kwargs)
