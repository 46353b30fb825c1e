"""Toolkit configuration: a versioned, strictly validated YAML schema.

Unknown keys are rejected with their full path so typos never silently
fall back to defaults, and parse -> serialize -> parse is an identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .lmi_synthesis import SynthesisOptions, SynthesisProblem, UncertaintyModel
from .lpv_model import (
    ParameterBox,
    PerformanceWeights,
    circle_grid,
    default_box,
    min_trig_radius,
    plant_basis,
)
from .motor_model import RPM_TO_RAD_S, MotorParams
from .simulation import Scenario

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or inconsistent toolkit configuration."""


@dataclass
class ScheduleConfig:
    temp_min: float = 30.0
    temp_max: float = 130.0
    max_speed_rpm: float = 400.0
    max_temp_rate: float = 50.0
    grid: tuple[int, int, int] = (5, 5, 3)
    grid_geometry: str = "annulus"  # annulus | box | circle
    b1_physical: bool = True

    def __post_init__(self) -> None:
        if self.grid_geometry not in ("annulus", "box", "circle"):
            raise ValueError(
                f"grid_geometry must be annulus, box or circle, got {self.grid_geometry!r}"
            )


@dataclass
class SynthesisConfig:
    solver: str = "CLARABEL"
    solver_options: dict = field(default_factory=dict)
    eps_lmi_rel: float = 1e-7
    gamma_backoff: float = 0.02
    epsilon: float | None = None
    x_parameter_dependent: bool = True
    y_parameter_dependent: bool = True
    recentre: bool = True
    current_state_scale: float = 1.0
    # Caps |closed-loop poles| so the recovered controller stays integrable
    # by the fixed-step simulation at its default step.
    pole_radius: float | None = 1e5


@dataclass
class UncertaintyConfig:
    h: list = field(default_factory=list)
    e1: list = field(default_factory=list)
    e2: list = field(default_factory=list)

    def model(self) -> UncertaintyModel:
        return UncertaintyModel(
            H=np.array(self.h, dtype=float),
            E1=np.array(self.e1, dtype=float),
            E2=np.array(self.e2, dtype=float),
        )


@dataclass
class ToolkitConfig:
    schema_version: int = SCHEMA_VERSION
    motor: MotorParams = field(default_factory=MotorParams)
    weights: PerformanceWeights = field(default_factory=PerformanceWeights)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    uncertainty: UncertaintyConfig | None = None
    scenarios: dict[str, Scenario] = field(default_factory=dict)
    output_dir: str = "out"

    def box(self) -> ParameterBox:
        sched = self.schedule
        return default_box(
            self.motor,
            temp_min=sched.temp_min,
            temp_max=sched.temp_max,
            omega_max=sched.max_speed_rpm * RPM_TO_RAD_S,
            temp_rate_max=sched.max_temp_rate,
        )

    def synthesis_problem(self, robust: bool = False) -> SynthesisProblem:
        """Assemble the gridded synthesis instance this config describes."""
        basis = plant_basis(self.motor, self.weights, self.schedule.b1_physical)
        syn = self.synthesis
        state_scale = None
        if syn.current_state_scale != 1.0:
            s = syn.current_state_scale
            state_scale = (1.0, 1.0, s, s)
        options = SynthesisOptions(
            solver=syn.solver,
            solver_options=dict(syn.solver_options),
            eps_lmi_rel=syn.eps_lmi_rel,
            gamma_backoff=syn.gamma_backoff,
            epsilon=syn.epsilon,
            x_parameter_dependent=syn.x_parameter_dependent,
            y_parameter_dependent=syn.y_parameter_dependent,
            recentre=syn.recentre,
            state_scale=state_scale,
        )
        uncertainty = None
        if robust:
            if self.uncertainty is not None:
                uncertainty = self.uncertainty.model()
            else:
                n = basis.B2.shape[0]
                n_u = basis.B2.shape[1]
                uncertainty = UncertaintyModel(
                    H=np.zeros((n, 1)), E1=np.zeros((1, n)), E2=np.zeros((1, n_u))
                )
        sched = self.schedule
        radius = 0.0
        grid_override = None
        if sched.grid_geometry == "annulus":
            radius = min_trig_radius(self.motor, sched.temp_min, sched.temp_max)
        elif sched.grid_geometry == "circle":
            grid_override = circle_grid(
                self.motor, sched.temp_min, sched.temp_max,
                n_angle=sched.grid[0] * sched.grid[1], n_temp=sched.grid[2],
            )
        return SynthesisProblem(
            basis=basis,
            box=self.box(),
            grid_counts=tuple(self.schedule.grid),
            uncertainty=uncertainty,
            min_trig_radius=radius,
            grid_override=grid_override,
            options=options,
        )


_MOTOR_KEYS = {
    "pole_pairs": int,
    "stator_resistance": float,
    "stator_inductance": float,
    "flux_linkage": float,
    "inertia": float,
    "friction": float,
    "magnet_temp_coeff": float,
}
_WEIGHT_KEYS = {
    "integral": float, "speed": float, "current_alpha": float,
    "current_beta": float, "input_alpha": float, "input_beta": float,
}
_SCHEDULE_KEYS = {
    "temp_min": float, "temp_max": float, "max_speed_rpm": float,
    "max_temp_rate": float, "grid": list, "grid_geometry": str,
    "b1_physical": bool,
}
_SYNTHESIS_KEYS = {
    "solver": str, "solver_options": dict, "eps_lmi_rel": float,
    "gamma_backoff": float, "epsilon": (float, type(None)),
    "x_parameter_dependent": bool, "y_parameter_dependent": bool,
    "recentre": bool, "current_state_scale": float,
}
_UNCERTAINTY_KEYS = {"h": list, "e1": list, "e2": list}
_SCENARIO_KEYS = {
    "duration": float, "time_step": float, "decimation": int,
    "initial_rpm": float, "speed_steps": list, "ramp_time": float,
    "load_steps": list, "temperature": list, "perturbation": dict,
    "controller": str,
}
_TOP_KEYS = {
    "schema_version": int, "motor": dict, "weights": dict, "schedule": dict,
    "synthesis": dict, "uncertainty": (dict, type(None)), "scenarios": dict,
    "output_dir": str,
}


def _check_keys(data: dict, allowed: dict, path: str) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown configuration key: {where}")


def _coerce(value, kind, where: str):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if value is None and type(None) in kinds:
        return None
    if bool in kinds:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected a boolean, got {value!r}")
    if int in kinds and isinstance(value, int) and not isinstance(value, bool):
        return value
    if float in kinds and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    for k in kinds:
        if k is not type(None) and isinstance(value, k):
            return value
    names = "/".join(k.__name__ for k in kinds)
    raise ConfigError(f"{where}: expected {names}, got {type(value).__name__} {value!r}")


def _section(data: dict, name: str, allowed: dict, builder, default):
    if name not in data or data[name] is None:
        return default() if callable(default) else default
    section = data[name]
    _check_keys(section, allowed, name)
    kwargs = {
        key: _coerce(value, allowed[key], f"{name}.{key}")
        for key, value in section.items()
    }
    try:
        return builder(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _pairs(raw, where: str) -> list[tuple[float, float]]:
    out = []
    for item in raw:
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ConfigError(f"{where}: expected [time, value] pairs, got {item!r}")
        out.append((float(item[0]), float(item[1])))
    return out


def _scenario(name: str, raw: dict) -> Scenario:
    _check_keys(raw, _SCENARIO_KEYS, f"scenarios.{name}")
    kwargs = {"name": name}
    for key, value in raw.items():
        where = f"scenarios.{name}.{key}"
        if key in ("speed_steps", "load_steps", "temperature"):
            kwargs[key] = _pairs(_coerce(value, list, where), where)
        elif key == "perturbation":
            pert = _coerce(value, dict, where)
            kwargs[key] = {k: float(v) for k, v in pert.items()}
        else:
            kwargs[key] = _coerce(value, _SCENARIO_KEYS[key], where)
    try:
        return Scenario(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"scenarios.{name}: {exc}") from exc


def parse_config(data: dict) -> ToolkitConfig:
    _check_keys(data, _TOP_KEYS, "")
    version = _coerce(data.get("schema_version", SCHEMA_VERSION), int, "schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")

    motor = _section(data, "motor", _MOTOR_KEYS, MotorParams, MotorParams)
    weights = _section(data, "weights", _WEIGHT_KEYS, PerformanceWeights, PerformanceWeights)

    def build_schedule(**kw):
        if "grid" in kw:
            grid = kw["grid"]
            if len(grid) != 3 or not all(isinstance(g, int) and g >= 1 for g in grid):
                raise ConfigError("schedule.grid must be three positive integers")
            kw["grid"] = tuple(grid)
        return ScheduleConfig(**kw)

    schedule = _section(data, "schedule", _SCHEDULE_KEYS, build_schedule, ScheduleConfig)
    synthesis = _section(data, "synthesis", _SYNTHESIS_KEYS, SynthesisConfig, SynthesisConfig)

    uncertainty = None
    if data.get("uncertainty") is not None:
        _check_keys(data["uncertainty"], _UNCERTAINTY_KEYS, "uncertainty")
        try:
            uncertainty = UncertaintyConfig(**data["uncertainty"])
            uncertainty.model()  # shape validation
        except ValueError as exc:
            raise ConfigError(f"uncertainty: {exc}") from exc

    scenarios = {}
    raw_scenarios = data.get("scenarios") or {}
    _coerce(raw_scenarios, dict, "scenarios")
    for name, raw in raw_scenarios.items():
        scenarios[name] = _scenario(name, _coerce(raw, dict, f"scenarios.{name}"))

    output_dir = _coerce(data.get("output_dir", "out"), str, "output_dir")
    return ToolkitConfig(
        schema_version=version, motor=motor, weights=weights, schedule=schedule,
        synthesis=synthesis, uncertainty=uncertainty, scenarios=scenarios,
        output_dir=output_dir,
    )


def load_config(path: str | Path) -> ToolkitConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    return parse_config(data)


def serialize_config(config: ToolkitConfig) -> dict:
    doc: dict = {
        "schema_version": config.schema_version,
        "motor": {k: getattr(config.motor, k) for k in _MOTOR_KEYS},
        "weights": {k: getattr(config.weights, k) for k in _WEIGHT_KEYS},
        "schedule": {
            "temp_min": config.schedule.temp_min,
            "temp_max": config.schedule.temp_max,
            "max_speed_rpm": config.schedule.max_speed_rpm,
            "max_temp_rate": config.schedule.max_temp_rate,
            "grid": list(config.schedule.grid),
            "grid_geometry": config.schedule.grid_geometry,
            "b1_physical": config.schedule.b1_physical,
        },
        "synthesis": {k: getattr(config.synthesis, k) for k in _SYNTHESIS_KEYS},
        "uncertainty": None if config.uncertainty is None else {
            "h": config.uncertainty.h,
            "e1": config.uncertainty.e1,
            "e2": config.uncertainty.e2,
        },
        "scenarios": {
            name: {
                "duration": sc.duration,
                "time_step": sc.time_step,
                "decimation": int(sc.decimation),
                "initial_rpm": sc.initial_rpm,
                "speed_steps": [[t, v] for t, v in sc.speed_steps],
                "ramp_time": sc.ramp_time,
                "load_steps": [[t, v] for t, v in sc.load_steps],
                "temperature": [[t, v] for t, v in sc.temperature],
                "perturbation": dict(sc.perturbation),
                "controller": sc.controller,
            }
            for name, sc in config.scenarios.items()
        },
        "output_dir": config.output_dir,
    }
    return doc


def dump_config(config: ToolkitConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(serialize_config(config), sort_keys=False))


def default_uncertainty(params: MotorParams) -> UncertaintyConfig:
    """Row-structured multiplicative uncertainty on the electrical rows.

    Bounds ten-percent-scale perturbations of the current-equation rows of
    A plus matching input-gain error on B2, the channels through which
    inductance and resistance mis-estimation act.  Larger certified balls
    are infeasible for this plant with the default weights; the benchmark
    perturbation exceeds the certified set, which the robust design is
    meant to survive rather than certify.
    """
    l_s = params.stator_inductance
    p_lam = params.pole_pairs * params.flux_linkage
    r_s = params.stator_resistance
    f_a = 0.1
    f_b = 0.1
    h = [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
    e1 = [
        [0.0, f_a * p_lam / l_s, f_a * r_s / l_s, 0.0],
        [0.0, f_a * p_lam / l_s, 0.0, f_a * r_s / l_s],
    ]
    e2 = [[f_b / l_s, 0.0], [0.0, f_b / l_s]]
    return UncertaintyConfig(h=h, e1=e1, e2=e2)


def default_config() -> ToolkitConfig:
    """The reference configuration: Table-style motor constants, default
    weights and box, and the three benchmark scenarios."""
    params = MotorParams()
    worst_case = {
        "stator_inductance": 2.0,
        "inertia": 2.0,
        "stator_resistance": 2.0 / 3.0,
        "friction": 2.0 / 3.0,
    }
    scenarios = {
        "step-nodist": Scenario(
            name="step-nodist",
            duration=2.0,
            speed_steps=[(0.1, 300.0), (1.0, 100.0)],
            temperature=[(0.0, 30.0)],
        ),
        "dist-temp": Scenario(
            name="dist-temp",
            duration=1.2,
            initial_rpm=300.0,
            load_steps=[(0.3, 0.1)],
            temperature=[(0.0, 30.0), (1.2, 100.0)],
        ),
        "perturbed": Scenario(
            name="perturbed",
            duration=1.2,
            speed_steps=[(0.05, 300.0)],
            load_steps=[(0.6, 0.1)],
            temperature=[(0.0, 30.0)],
            perturbation=dict(worst_case),
        ),
    }
    return ToolkitConfig(
        motor=params,
        uncertainty=default_uncertainty(params),
        scenarios=scenarios,
    )
