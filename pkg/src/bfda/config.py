"""Flat ``section.key = value`` experiment configuration.

Lines starting with ``#`` and blank lines are ignored. Every key must be
known; values are validated by the component types they feed. Sweep axes
take comma-separated lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .bounds import BoundsConfig
from .dynamics import AssimParams, ForcingSpec, PhysicalParams
from .interpolants import InterpolantSpec
from .spectral import Grid
from .timestepper import StepperConfig


class ConfigError(ValueError):
    pass


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _float(s):
    s = s.strip()
    if s.lower() in ("pi", "2pi", "2*pi"):
        return 2 * math.pi if "2" in s else math.pi
    return float(s)


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else _float(s)


def _float_list(s):
    out = tuple(_float(x) for x in s.split(",") if x.strip())
    if not out:
        raise ValueError("empty list")
    return out


_STR = str.strip

# key -> (parser, default); None default means "derived" or "unset"
SCHEMA: Dict[str, Tuple] = {
    "grid.n": (int, 32),
    "grid.dealias_fraction": (_float, 2.0 / 3.0),
    "physical.nu": (_float, 0.1),
    "physical.l": (_float, 2 * math.pi),
    "physical.alpha": (_float, 2.0),
    "physical.a_tilde": (_float, 0.1),
    "assim.beta": (_opt_float, None),
    "assim.b_tilde": (_opt_float, None),
    "assim.eta": (_float, 10.0),
    "interp.kind": (_STR, "fourier-lowpass"),
    "interp.h": (_float, math.pi / 2),
    "interp.c0": (_opt_float, None),
    "interp.c1": (_opt_float, None),
    "forcing.kind": (_STR, "random-low-mode"),
    "forcing.amplitude": (_float, 0.01),
    "forcing.kmin": (_float, 1.0),
    "forcing.kmax": (_float, 2.0),
    "forcing.seed": (int, 1),
    "forcing.omega": (_float, 0.0),
    "stepper.dt": (_float, 0.05),
    "stepper.spin_dt": (_opt_float, None),
    "stepper.scheme": (_STR, "IF-RK3"),
    "stepper.cfl_safety": (_float, 0.5),
    "stepper.adaptive": (_bool, False),
    "bounds.C3": (_float, 1.0),
    "bounds.C4": (_float, 1.0),
    "bounds.C6": (_float, 1.0),
    "bounds.C42_5": (_float, 1.0),
    "bounds.C10": (_float, 1.0),
    "bounds.C6beta": (_float, 1.0),
    "bounds.Cinf": (_float, 1.0),
    "bounds.kappa": (_opt_float, None),
    "bounds.M": (_opt_float, None),
    "run.T": (_float, 50.0),
    "run.T_spin": (_float, 200.0),
    "run.seed": (int, 0),
    "run.ic_amplitude": (_float, 0.05),
    "run.sample_stride": (int, 20),
    "run.w0": (_STR, "zero"),
    "run.output": (_STR, "output"),
    "sweep.beta": (_float_list, None),
    "sweep.b_tilde": (_float_list, None),
    "sweep.eta": (_float_list, None),
    "sweep.h": (_float_list, None),
}

SWEEP_AXES = ("beta", "b_tilde", "eta", "h")
W0_CHOICES = ("zero", "truth")


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


@dataclass(frozen=True)
class ExperimentConfig:
    values: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        full = {k: d for k, (_, d) in SCHEMA.items()}
        unknown = sorted(set(self.values) - set(full))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        full.update(self.values)
        object.__setattr__(self, "values", full)
        self.validate()

    def __getitem__(self, key):
        return self.values[key]

    def override(self, mapping) -> "ExperimentConfig":
        v = dict(self.values)
        v.update(mapping)
        return ExperimentConfig(v)

    # -- component builders -------------------------------------------------
    def grid(self) -> Grid:
        return Grid(self["physical.l"], self["grid.n"], self["grid.dealias_fraction"])

    def physical(self) -> PhysicalParams:
        return PhysicalParams(self["physical.nu"], self["physical.l"], self["physical.alpha"],
                              self["physical.a_tilde"])

    def interpolant(self, h=None) -> InterpolantSpec:
        return InterpolantSpec(self["interp.kind"], self["interp.h"] if h is None else h,
                               self["interp.c0"], self["interp.c1"])

    def assim(self, **over) -> AssimParams:
        beta = self["assim.beta"] if self["assim.beta"] is not None else self["physical.alpha"]
        bt = self["assim.b_tilde"] if self["assim.b_tilde"] is not None \
            else self["physical.a_tilde"]
        kw = {"beta": beta, "b_tilde": bt, "eta": self["assim.eta"]}
        h = over.pop("h", None)
        kw.update(over)
        return AssimParams(interpolant=self.interpolant(h), **kw)

    def forcing(self) -> ForcingSpec:
        return ForcingSpec(self["forcing.kind"], self["forcing.amplitude"], self["forcing.kmin"],
                           self["forcing.kmax"], self["forcing.seed"], self["forcing.omega"])

    def stepper(self) -> StepperConfig:
        return StepperConfig(self["stepper.dt"], self["stepper.scheme"],
                             self["stepper.cfl_safety"], self["stepper.adaptive"])

    def spin_stepper(self) -> StepperConfig:
        dt = self["stepper.spin_dt"] or self["stepper.dt"]
        return StepperConfig(dt, self["stepper.scheme"], self["stepper.cfl_safety"],
                             self["stepper.adaptive"])

    def bounds(self) -> BoundsConfig:
        return BoundsConfig(C3=self["bounds.C3"], C4=self["bounds.C4"], C6=self["bounds.C6"],
                            C42_5=self["bounds.C42_5"], C10=self["bounds.C10"],
                            C6beta=self["bounds.C6beta"], Cinf=self["bounds.Cinf"],
                            kappa=self["bounds.kappa"])

    def sweep_axes(self) -> Dict[str, tuple]:
        return {a: self[f"sweep.{a}"] for a in SWEEP_AXES if self[f"sweep.{a}"] is not None}

    def validate(self):
        checks = [("grid", self.grid), ("physical", self.physical), ("assim", self.assim),
                  ("forcing", self.forcing), ("stepper", self.stepper),
                  ("stepper", self.spin_stepper), ("bounds", self.bounds)]
        for section, build in checks:
            try:
                build()
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"[{section}] {exc}") from None
        from .interpolants import check_compatible
        try:
            check_compatible(self.interpolant(), self.grid())
            for h in self["sweep.h"] or ():
                check_compatible(self.interpolant(h), self.grid())
        except ValueError as exc:
            raise ConfigError(f"[interp] {exc}") from None
        for k in ("run.T", "run.T_spin"):
            if not self[k] >= 0:
                raise ConfigError(f"{k} must be >= 0, got {self[k]}")
        if self["run.sample_stride"] < 1:
            raise ConfigError("run.sample_stride must be >= 1")
        if self["run.w0"] not in W0_CHOICES:
            raise ConfigError(f"run.w0 must be one of {W0_CHOICES}, got {self['run.w0']!r}")
        if self["bounds.M"] is not None and not self["bounds.M"] > 0:
            raise ConfigError("bounds.M must be > 0")

    # -- text form ----------------------------------------------------------
    def to_text(self) -> str:
        return "".join(f"{k} = {_fmt(self.values[k])}\n" for k in sorted(self.values))

    def meta(self) -> Dict[str, str]:
        return {f"config.{k}": _fmt(v) for k, v in sorted(self.values.items())}


def _parse_value(key, raw):
    parser, default = SCHEMA[key]
    if default is None and raw.strip().lower() in ("", "none"):
        return None
    return parser(raw)


def parse_text(text: str) -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _parse_value(key, val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return ExperimentConfig(values)


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_text(text)


def parse_override(key, raw):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        return _parse_value(key, raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def sweep_points(cfg: ExperimentConfig):
    """Cartesian product of the sweep axes as a list of dicts."""
    axes = cfg.sweep_axes()
    if not axes:
        raise ConfigError("sweep needs at least one sweep.* axis")
    names = list(axes)
    grids = np.meshgrid(*[np.arange(len(axes[n])) for n in names], indexing="ij")
    pts = []
    for idx in zip(*[g.ravel() for g in grids]):
        pts.append({n: axes[n][i] for n, i in zip(names, idx)})
    return pts
