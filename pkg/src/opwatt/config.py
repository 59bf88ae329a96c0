"""Run configuration: one YAML (or JSON) document, validated up front.

Every section mirrors a module's defaults. Unknown keys anywhere are
errors, so a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import yaml

from .preprocess import PreprocessConfig
from .simulator import (
    AlwaysOn, Alternating, BatterySpec, NoiseSpec, OperatorSpec, Periodic, PowerState,
    SimulationConfigError, make_scenario, two_state_operator,
)


class ConfigError(ValueError):
    pass


@dataclass
class BatteryConfig:
    e_per_percent: float = 100.0
    idle_power_w: float = 0.717
    initial_soc: int = 100


@dataclass
class NoiseConfig:
    soc_timing_sigma_s: float = 1.0
    power_sigma_frac: float = 0.02
    poll_drop_prob: float = 0.01


@dataclass
class PreprocessSection:
    enabled: bool = True
    poll_threshold: float = 0.10
    bucket_width_s: float = 10.0
    k_sigma: float = 2.0
    min_bucket: int = 3
    cooks_rule: str = "4/n"
    cooks_resid_gate: float = 3.0
    bucket_detrend: bool = True
    resid_floor_s: float = 0.01
    max_rounds: int = 50

    def to_config(self) -> PreprocessConfig:
        d = dataclasses.asdict(self)
        d.pop("enabled")
        return PreprocessConfig(**d)


@dataclass
class CvConfig:
    outer: int = 8
    inner: int = 4
    n_jobs: int = 1
    C: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0, 100.0])
    epsilon: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0])
    kernels: list[str] = field(default_factory=lambda: ["linear", "rbf"])
    gamma_scale: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])


@dataclass
class ExperimentConfig:
    ratios: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0])
    sizes: list[int] = field(default_factory=lambda: [50, 100, 200, 400])
    n: int = 400
    ratio: float = 8.0
    prob_high: float = 0.5
    replications: int = 5
    n_jobs: int = 1


@dataclass
class RunConfig:
    scenario: str | None = "fixed-concurrent"
    # explicit workload; replaces the scenario's operators when given
    operators: list[dict] | None = None
    battery: BatteryConfig = field(default_factory=BatteryConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    zero_noise: bool = False
    seed: int = 0
    intervals: int = 200
    poll_interval_ms: int = 1000
    expand_counts: bool = False
    preprocess: PreprocessSection = field(default_factory=PreprocessSection)
    cv: CvConfig = field(default_factory=CvConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    epoch_len_s: float = 10.0
    out: str = "runs/out"

    def validate(self) -> "RunConfig":
        if self.scenario is None and not self.operators:
            raise ConfigError("either scenario or operators must be given")
        if self.intervals < 1:
            raise ConfigError("intervals must be >= 1")
        if self.poll_interval_ms <= 0:
            raise ConfigError("poll_interval_ms must be > 0")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.cv.outer < 2 or self.cv.inner < 2:
            raise ConfigError("cv folds must be >= 2")
        if self.experiment.replications < 1:
            raise ConfigError("experiment.replications must be >= 1")
        if self.epoch_len_s <= 0:
            raise ConfigError("epoch_len_s must be > 0")
        for k in self.cv.kernels:
            if k not in ("linear", "rbf"):
                raise ConfigError(f"unknown kernel {k!r}")
        try:
            self.workload()
        except SimulationConfigError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def battery_spec(self) -> BatterySpec:
        return BatterySpec(**dataclasses.asdict(self.battery))

    def noise_spec(self, seed: int | None = None) -> NoiseSpec:
        seed = self.seed if seed is None else seed
        if self.zero_noise:
            return NoiseSpec.zero(seed)
        return NoiseSpec(**dataclasses.asdict(self.noise), seed=seed)

    def workload(self) -> list[OperatorSpec]:
        if self.operators:
            return [operator_from_dict(d, f"operators[{i}]") for i, d in enumerate(self.operators)]
        return make_scenario(self.scenario)[0]

    def svr_grid(self) -> list[dict]:
        from .regress.cv import svr_grid

        return svr_grid(self.cv.C, self.cv.epsilon, self.cv.kernels, self.cv.gamma_scale)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        body = self.as_dict()
        body.pop("out", None)
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


_SCHEDULES = {"periodic": Periodic, "alternating": Alternating, "always-on": AlwaysOn}


def operator_from_dict(d: dict, where: str = "operator") -> OperatorSpec:
    """``{type, states: [{dyn_power_w, probability}], schedule: {kind, ...}}``.

    ``two_state: {ratio, prob_high, low_w}`` may replace ``states``.
    """
    _reject_unknown(d, {"type", "states", "schedule", "two_state"}, where)
    if "type" not in d or "schedule" not in d:
        raise ConfigError(f"{where}: type and schedule are required")
    sched = dict(d["schedule"])
    kind = sched.pop("kind", None)
    if kind not in _SCHEDULES:
        raise ConfigError(f"{where}.schedule.kind must be one of {sorted(_SCHEDULES)}")
    cls = _SCHEDULES[kind]
    _reject_unknown(sched, {f.name for f in dataclasses.fields(cls)}, f"{where}.schedule")
    schedule = cls(**sched)
    if "two_state" in d:
        ts = dict(d["two_state"])
        _reject_unknown(ts, {"ratio", "prob_high", "low_w"}, f"{where}.two_state")
        return two_state_operator(op_type=d["type"], schedule=schedule, **ts)
    states = []
    for j, s in enumerate(d.get("states") or []):
        _reject_unknown(s, {"dyn_power_w", "probability"}, f"{where}.states[{j}]")
        states.append(PowerState(**s))
    return OperatorSpec(d["type"], tuple(states), schedule)


def _reject_unknown(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected a mapping")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, extra))}")


def _build(cls, data: dict, where: str):
    _reject_unknown(data, {f.name for f in dataclasses.fields(cls)}, where)
    hints = get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if dataclasses.is_dataclass(hint):
            value = _build(hint, value or {}, f"{where}.{f.name}" if where else f.name)
        else:
            value = _coerce(value, hint, f"{where}.{f.name}" if where else f.name)
        kwargs[f.name] = value
    return cls(**kwargs)


def _coerce(value: Any, hint, where: str):
    if hint is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if hint is bool and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if hint is str and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    origin = getattr(hint, "__origin__", None)
    if origin is list and not isinstance(value, list):
        raise ConfigError(f"{where}: expected a list, got {value!r}")
    return value


def config_from_dict(data: dict | None) -> RunConfig:
    return _build(RunConfig, data or {}, "").validate()


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    data: dict = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: cannot parse config: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return config_from_dict(data)
