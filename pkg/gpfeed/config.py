"""Experiment configuration: JSON file, environment overrides, defaults.

Precedence for the top-level run settings is CLI flag → environment variable
→ config file → built-in default. Every section is validated before anything
runs; unknown keys are errors.
"""
from __future__ import annotations

import json
import math
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from gpfeed.errors import ConfigError, GpfeedError
from gpfeed.hyperopt import OptimizerConfig
from gpfeed.kernels import KernelSpec, kernel_from_name, spec_from_dict
from gpfeed.nfir import WindowConfig
from gpfeed.pipeline import DEFAULT_SCALES, TRAINING_FEEDFORWARDS, ExperimentPlan, LoopSetup
from gpfeed.plantsim import FrictionOn, FrictionPlant, baseline_feedforward, pd_controller
from gpfeed.trajectory import Trajectory, gen_third_order_reference

SCHEMA_VERSION = 1
DEFAULT_CONFIG_NAME = "gpfeed.json"

# ── Section schemas: key → default ───────────────────────────────────────────

PLANT_DEFAULTS: dict[str, Any] = {
    "m": 0.083,
    "coulomb_level": 0.3,
    "viscous_coeff": 2.8531,
    "Ts": 1e-3,
    "friction_on": "velocity_sign",
}
CONTROLLER_DEFAULTS: dict[str, Any] = {"kp": 1300.0, "kd": 12.0}
FEEDFORWARD_DEFAULTS: dict[str, Any] = {"velocity_gain": 2.8531, "acceleration_gain": 0.083}
TRAJECTORY_DEFAULTS: dict[str, Any] = {
    "displacement": 0.1,
    "v_max": 0.1,
    "a_max": 1.0,
    "j_max": 20.0,
    "dwell": 0.5,
    "lead": 0.25,
    "return_move": True,
    "n_samples": 4501,
    "reference_id": "r1",
}
WINDOW_DEFAULTS: dict[str, Any] = {"n_c": 20, "n_ac": 40, "stride": 30}
OPTIMIZER_DEFAULTS: dict[str, Any] = {
    "max_iterations": 100,
    "gradient_tolerance": 1e-5,
    "restarts": 2,
    "bounds": [-6.0, 6.0],
}
PLAN_DEFAULTS: dict[str, Any] = {
    "scale_factors": list(DEFAULT_SCALES),
    "repetitions": 1,
    "noise_std": 0.0,
    "training_feedforward": "baseline",
    "average_repetitions": True,
    "window": WINDOW_DEFAULTS,
    "kernel": "matern32",
    "optimizer": OPTIMIZER_DEFAULTS,
}
EVALUATION_DEFAULTS: dict[str, Any] = {"scales": [1.0, 1.05]}
CONVERGENCE_DEFAULTS: dict[str, Any] = {
    "strides": [8, 4, 2, 1],
    "eval_scale": 1.0,
    "include_eval": True,
    "scale_factors": [1.0],
    "training_feedforward": "inverse",
    "kernel": None,
    "window": {"n_c": 5, "n_ac": 10, "stride": 1},
    "optimize": False,
    "friction": False,
    "max_rows": 6000,
}
TOP_LEVEL = {"schema_version", "output_dir", "seed", "workers", "plant", "controller",
             "feedforward", "trajectory", "plan", "evaluation", "convergence"}
REQUIRED_SECTIONS = ("plant", "controller", "trajectory", "plan")


# ── Precedence helpers ───────────────────────────────────────────────────────


def _cfg_int(env_key: str, raw: Mapping[str, Any], key: str, default: int) -> int:
    """Read an integer: env var → config file → default."""
    env = os.environ.get(env_key)
    if env is not None:
        try:
            return int(env)
        except ValueError as e:
            raise ConfigError(f"{env_key}: expected an integer, got {env!r}") from e
    val = raw.get(key)
    if val is None:
        return default
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{key}: expected an integer, got {val!r}")
    return val


def _cfg_str(env_key: str, raw: Mapping[str, Any], key: str, default: str) -> str:
    """Read a string: env var → config file → default."""
    env = os.environ.get(env_key)
    if env is not None:
        return env
    val = raw.get(key)
    if val is None:
        return default
    if not isinstance(val, str):
        raise ConfigError(f"{key}: expected a string, got {val!r}")
    return val


# ── Section validation ───────────────────────────────────────────────────────


def _section(raw: Mapping[str, Any], name: str, defaults: Mapping[str, Any]) -> dict[str, Any]:
    """Merge a section over its defaults, rejecting unknown keys."""
    value = raw.get(name)
    if value is None:
        return dict(defaults)
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected an object, got {type(value).__name__}")
    unknown = set(value) - set(defaults)
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {', '.join(sorted(unknown))}")
    return {**defaults, **value}


def _num(section: Mapping[str, Any], key: str, where: str, *, minimum: float | None = None,
         positive: bool = False) -> float:
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
        raise ConfigError(f"{where}.{key}: expected a finite number, got {val!r}")
    if positive and not val > 0:
        raise ConfigError(f"{where}.{key}: must be > 0, got {val}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {val}")
    return float(val)


def _int(section: Mapping[str, Any], key: str, where: str, *, minimum: int = 0) -> int:
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    if val < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {val}")
    return val


def _bool(section: Mapping[str, Any], key: str, where: str) -> bool:
    val = section[key]
    if not isinstance(val, bool):
        raise ConfigError(f"{where}.{key}: expected true or false, got {val!r}")
    return val


def _num_list(section: Mapping[str, Any], key: str, where: str) -> tuple[float, ...]:
    val = section[key]
    if not isinstance(val, list) or not val:
        raise ConfigError(f"{where}.{key}: expected a non-empty list of numbers")
    return tuple(_num({key: v}, key, where) for v in val)


def _choice(section: Mapping[str, Any], key: str, where: str, choices: tuple[str, ...]) -> str:
    val = section[key]
    if val not in choices:
        raise ConfigError(f"{where}.{key}: must be one of {', '.join(choices)}, got {val!r}")
    return str(val)


def _window(value: Any, where: str) -> WindowConfig:
    sec = _section({where: value}, where, WINDOW_DEFAULTS)
    return WindowConfig(
        n_c=_int(sec, "n_c", where),
        n_ac=_int(sec, "n_ac", where),
        stride=_int(sec, "stride", where, minimum=1),
    )


def _kernel(value: Any, n_theta: int, where: str) -> KernelSpec | str | None:
    """A variant name (scaled to the data later), an isotropic spec or a full spec."""
    if value is None or isinstance(value, str):
        if isinstance(value, str):
            kernel_from_name(value, n_theta)
        return value
    if not isinstance(value, dict):
        raise ConfigError(f"{where}: expected a name or an object")
    if "variant" in value:
        spec = spec_from_dict(value)
        if spec.dim != n_theta:
            raise ConfigError(f"{where}: kernel has dim {spec.dim}, window needs {n_theta}")
        return spec
    iso = _section({where: value}, where, {"name": "matern32", "sigma_f": 1.0,
                                           "lengthscale": 1.0, "period": 1.0})
    return kernel_from_name(
        str(iso["name"]), n_theta,
        sigma_f=_num(iso, "sigma_f", where, positive=True),
        lengthscale=_num(iso, "lengthscale", where, positive=True),
        period=_num(iso, "period", where, positive=True),
    )


def _optimizer(value: Any, seed: int, workers: int) -> OptimizerConfig | None:
    if value is None:
        return None
    sec = _section({"plan.optimizer": value}, "plan.optimizer", OPTIMIZER_DEFAULTS)
    bounds = sec["bounds"]
    if isinstance(bounds, list) and len(bounds) == 2:
        box: Any = (_num({"b": bounds[0]}, "b", "plan.optimizer.bounds"),
                    _num({"b": bounds[1]}, "b", "plan.optimizer.bounds"))
    elif isinstance(bounds, dict):
        box = {str(k): (float(v[0]), float(v[1])) for k, v in bounds.items()}
    else:
        raise ConfigError("plan.optimizer.bounds: expected [low, high] or {name: [low, high]}")
    return OptimizerConfig(
        max_iterations=_int(sec, "max_iterations", "plan.optimizer", minimum=1),
        gradient_tolerance=_num(sec, "gradient_tolerance", "plan.optimizer", positive=True),
        restarts=_int(sec, "restarts", "plan.optimizer"),
        bounds=box,
        seed=seed,
        workers=workers,
    )


@dataclass(frozen=True)
class ConvergenceSettings:
    strides: tuple[int, ...] = (8, 4, 2, 1)
    eval_scale: float = 1.0
    include_eval: bool = True
    scale_factors: tuple[float, ...] | None = None
    training_feedforward: str = "inverse"
    kernel: KernelSpec | str | None = None
    window: WindowConfig | None = None
    optimize: bool = False
    friction: bool = False
    max_rows: int | None = 6000


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment file plus resolved run settings."""

    plan: ExperimentPlan
    trajectory: dict[str, Any]
    evaluation_scales: tuple[float, ...] = (1.0, 1.05)
    convergence: ConvergenceSettings = field(default_factory=ConvergenceSettings)
    output_dir: Path = Path("out")
    seed: int = 0
    workers: int = 1
    source: Path | None = None

    @property
    def loop(self) -> LoopSetup:
        return self.plan.loop

    @property
    def reference(self) -> Trajectory:
        return self.plan.base_reference

    def eval_references(self, scales: tuple[float, ...] | None = None) -> list[Trajectory]:
        base = self.reference
        return [base if a == 1.0 else base.scaled(a, reference_id=f"{base.reference_id}x{a:g}")
                for a in (scales if scales is not None else self.evaluation_scales)]

    def convergence_plan(self) -> ExperimentPlan:
        """Plan of the convergence study.

        Unless ``convergence.friction`` is set the plant runs without Coulomb
        friction: the stiction band stops the mass just before each move ends,
        so a friction plant has no input that reproduces the reference exactly.
        """
        c = self.convergence
        loop = self.plan.loop
        if not c.friction:
            loop = replace(loop, plant=replace(loop.plant, coulomb_level=0.0))
        window = c.window or self.plan.window
        kernel = c.kernel
        if kernel is None and (c.window is None or not isinstance(self.plan.kernel, KernelSpec)):
            kernel = self.plan.kernel
        return replace(
            self.plan,
            loop=loop,
            window=window,
            kernel=kernel,
            scale_factors=c.scale_factors or self.plan.scale_factors,
            training_feedforward=c.training_feedforward,
            optimizer=self.plan.optimizer if c.optimize else None,
        )


def build_reference(section: Mapping[str, Any], Ts: float) -> Trajectory:
    where = "trajectory"
    n = section["n_samples"]
    return gen_third_order_reference(
        _num(section, "displacement", where),
        _num(section, "v_max", where, positive=True),
        _num(section, "a_max", where, positive=True),
        _num(section, "j_max", where, positive=True),
        Ts,
        _num(section, "dwell", where, minimum=0.0),
        lead=_num(section, "lead", where, minimum=0.0),
        return_move=_bool(section, "return_move", where),
        n_samples=None if n is None else _int(section, "n_samples", where, minimum=1),
        reference_id=str(section["reference_id"]),
    )


def parse_config(raw: Any, overrides: Mapping[str, Any] | None = None,
                 source: Path | None = None, *, require_sections: bool = True) -> ExperimentConfig:
    """Validate a decoded config document and build the experiment objects.

    ``overrides`` holds CLI flags (``seed``, ``output_dir``, ``workers``,
    ``stride``, ``kernel``, ``friction_on``); ``None`` values are ignored.
    """
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    unknown = set(raw) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {', '.join(sorted(unknown))}")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    if require_sections:
        missing = [s for s in REQUIRED_SECTIONS if s not in raw]
        if missing:
            raise ConfigError(f"missing section(s) {', '.join(missing)}")

    seed = flags.get("seed", _cfg_int("GPFEED_SEED", raw, "seed", 0))
    workers = flags.get("workers", _cfg_int("GPFEED_WORKERS", raw, "workers", 1))
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")
    output_dir = Path(flags.get("output_dir", _cfg_str("GPFEED_OUT_DIR", raw, "output_dir", "out")))

    try:
        plant_sec = _section(raw, "plant", PLANT_DEFAULTS)
        if "friction_on" in flags:
            plant_sec["friction_on"] = flags["friction_on"]
        Ts = _num(plant_sec, "Ts", "plant", positive=True)
        plant = FrictionPlant(
            m=_num(plant_sec, "m", "plant", positive=True),
            coulomb_level=_num(plant_sec, "coulomb_level", "plant", minimum=0.0),
            viscous_coeff=_num(plant_sec, "viscous_coeff", "plant", minimum=0.0),
            Ts=Ts,
            friction_on=FrictionOn(_choice(plant_sec, "friction_on", "plant",
                                           tuple(f.value for f in FrictionOn))),
        )
        ctrl = _section(raw, "controller", CONTROLLER_DEFAULTS)
        ff = _section(raw, "feedforward", FEEDFORWARD_DEFAULTS)
        loop = LoopSetup(
            plant=plant,
            controller=pd_controller(_num(ctrl, "kp", "controller"),
                                     _num(ctrl, "kd", "controller"), Ts),
            feedforward=baseline_feedforward(Ts, _num(ff, "velocity_gain", "feedforward"),
                                             _num(ff, "acceleration_gain", "feedforward")),
        )

        traj_sec = _section(raw, "trajectory", TRAJECTORY_DEFAULTS)
        reference = build_reference(traj_sec, Ts)

        plan_sec = _section(raw, "plan", PLAN_DEFAULTS)
        window = _window(plan_sec["window"], "plan.window")
        if "stride" in flags:
            window = replace(window, stride=int(flags["stride"]))
        kernel = _kernel(flags.get("kernel", plan_sec["kernel"]), window.n_theta, "plan.kernel")
        plan = ExperimentPlan(
            base_reference=reference,
            scale_factors=_num_list(plan_sec, "scale_factors", "plan"),
            repetitions=_int(plan_sec, "repetitions", "plan", minimum=1),
            window=window,
            kernel=kernel,
            optimizer=_optimizer(plan_sec["optimizer"], seed, workers),
            noise_std=_num(plan_sec, "noise_std", "plan", minimum=0.0),
            seed=seed,
            loop=loop,
            training_feedforward=_choice(plan_sec, "training_feedforward", "plan",
                                         TRAINING_FEEDFORWARDS),
            average_repetitions=_bool(plan_sec, "average_repetitions", "plan"),
            workers=workers,
        )

        eval_sec = _section(raw, "evaluation", EVALUATION_DEFAULTS)
        conv_sec = _section(raw, "convergence", CONVERGENCE_DEFAULTS)
        strides = tuple(_int({"s": s}, "s", "convergence.strides", minimum=1)
                        for s in conv_sec["strides"] or [])
        if not strides:
            raise ConfigError("convergence.strides: expected a non-empty list of integers")
        conv_window = (None if conv_sec["window"] is None
                       else _window(conv_sec["window"], "convergence.window"))
        convergence = ConvergenceSettings(
            strides=strides,
            eval_scale=_num(conv_sec, "eval_scale", "convergence", positive=True),
            include_eval=_bool(conv_sec, "include_eval", "convergence"),
            scale_factors=(None if conv_sec["scale_factors"] is None
                           else _num_list(conv_sec, "scale_factors", "convergence")),
            training_feedforward=_choice(conv_sec, "training_feedforward", "convergence",
                                         TRAINING_FEEDFORWARDS),
            kernel=_kernel(conv_sec["kernel"], (conv_window or window).n_theta,
                           "convergence.kernel"),
            window=conv_window,
            optimize=_bool(conv_sec, "optimize", "convergence"),
            friction=_bool(conv_sec, "friction", "convergence"),
            max_rows=(None if conv_sec["max_rows"] is None
                      else _int(conv_sec, "max_rows", "convergence", minimum=1)),
        )
    except ConfigError:
        raise
    except (GpfeedError, ValueError, TypeError, KeyError) as e:
        raise ConfigError(str(e)) from e

    return ExperimentConfig(
        plan=plan,
        trajectory=traj_sec,
        evaluation_scales=_num_list(eval_sec, "scales", "evaluation"),
        convergence=convergence,
        output_dir=output_dir,
        seed=seed,
        workers=workers,
        source=source,
    )


def load_config(path: Path | None = None,
                overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Read and validate a config file; without a path the built-in defaults are used."""
    if path is None:
        return parse_config({"schema_version": SCHEMA_VERSION}, overrides,
                            require_sections=False)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ConfigError(f"{path}: cannot read ({e.strerror})") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    return parse_config(raw, overrides, path)


def default_document() -> dict[str, Any]:
    """The built-in defaults as a complete config document."""
    return {
        "schema_version": SCHEMA_VERSION,
        "output_dir": "out",
        "seed": 0,
        "workers": 1,
        "plant": dict(PLANT_DEFAULTS),
        "controller": dict(CONTROLLER_DEFAULTS),
        "feedforward": dict(FEEDFORWARD_DEFAULTS),
        "trajectory": dict(TRAJECTORY_DEFAULTS),
        "plan": {**PLAN_DEFAULTS, "window": dict(WINDOW_DEFAULTS),
                 "optimizer": dict(OPTIMIZER_DEFAULTS)},
        "evaluation": dict(EVALUATION_DEFAULTS),
        "convergence": dict(CONVERGENCE_DEFAULTS),
    }
