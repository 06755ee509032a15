"""Integrating-factor Runge-Kutta stepping for the viscous systems.

The viscous term is removed through ``v = exp(nu |k|^2 tau) u`` over each
step and the remaining terms (advection, damping, forcing, nudging) are
advanced explicitly. IF-RK3 uses Williamson's 2N-storage third order
coefficients; IF-Euler is a first order debug scheme.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import spectral as sp

SCHEMES = ("IF-RK3", "IF-Euler")

_RK3_A = (0.0, -5.0 / 9.0, -153.0 / 128.0)
_RK3_B = (1.0 / 3.0, 15.0 / 16.0, 8.0 / 15.0)
_RK3_C = (0.0, 1.0 / 3.0, 3.0 / 4.0)


class BlowUpError(RuntimeError):
    def __init__(self, t, max_mode, system="state"):
        self.t = t
        self.max_mode = max_mode
        self.system = system
        super().__init__(
            f"{system} blew up at t={t:.6g} (max |coefficient| = {max_mode:.3g})")


@dataclass(frozen=True)
class StepperConfig:
    dt: float
    scheme: str = "IF-RK3"
    cfl_safety: float = 0.5
    adaptive: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"stepper.dt must be > 0, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"stepper.scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("stepper.cfl_safety must lie in (0, 1]")


Nonlinear = Callable[[float, Sequence[np.ndarray]], Sequence[np.ndarray]]

_BLOWUP_LIMIT = 1e150


def check_finite(states, t, names=None):
    for i, c in enumerate(states):
        m = np.max(np.abs(c)) if c.size else 0.0
        if not np.isfinite(m) or m > _BLOWUP_LIMIT:
            name = names[i] if names else f"system {i}"
            raise BlowUpError(t, float(m), name)


def step(states: Sequence[np.ndarray], t: float, dt: float, nonlinear: Nonlinear,
         decay: Sequence[np.ndarray], scheme: str = "IF-RK3", names=None):
    """Advance coefficient arrays ``states`` from t to t + dt.

    ``decay[i]`` is the diagonal rate of the stiff linear part of system i
    (``nu |k|^2``); ``nonlinear(t, stage_states)`` returns the remaining
    right-hand side for every system evaluated on the same stage.
    """
    if scheme == "IF-Euler":
        n = nonlinear(t, states)
        out = [np.exp(-d * dt) * (c + dt * nc) for c, nc, d in zip(states, n, decay)]
        check_finite(out, t + dt, names)
        return out

    v = [c.copy() for c in states]
    q = [None] * len(states)
    for a, b, cst in zip(_RK3_A, _RK3_B, _RK3_C):
        tau = cst * dt
        if tau:
            shrink = [_exp_factor(d, -tau) for d in decay]
            stage = [s * vi for vi, s in zip(v, shrink)]
            grow = [1.0 / s for s in shrink]
        else:
            stage = v
            grow = None
        n = nonlinear(t + tau, stage)
        for i in range(len(v)):
            k = n[i] if grow is None else grow[i] * n[i]
            q[i] = dt * k if a == 0.0 else a * q[i] + dt * k
            v[i] = v[i] + b * q[i]
    out = [_exp_factor(d, -dt) * vi for vi, d in zip(v, decay)]
    check_finite(out, t + dt, names)
    return out


_EXP_CACHE: dict = {}


def _exp_factor(d, tau):
    # decay arrays are long-lived grid attributes, so key on identity
    key = (id(d), tau)
    hit = _EXP_CACHE.get(key)
    if hit is not None and hit[0] is d:
        return hit[1]
    if len(_EXP_CACHE) > 64:
        _EXP_CACHE.clear()
    val = np.exp(d * tau)
    _EXP_CACHE[key] = (d, val)
    return val


def stable_dt(u, params, cfg: StepperConfig, assim=None, w=None):
    """Largest dt allowed by the advective CFL, damping and nudging limits.

    Each limit is ``cfl_safety`` times the reciprocal of the relevant rate;
    the configured ``cfg.dt`` acts as the ceiling.
    """
    limits = stable_dt_limits(u, params, cfg, assim, w)
    return min([cfg.dt] + list(limits.values()))


def stable_dt_limits(u, params, cfg: StepperConfig, assim=None, w=None):
    grid = u.grid
    s = cfg.cfl_safety
    speeds = [sp.max_speed(u)]
    if w is not None:
        speeds.append(sp.max_speed(w))
    vmax = max(speeds)
    limits = {}
    if vmax > 0:
        limits["advective"] = s * grid.l / (grid.n * vmax)
        rate = params.a * sp.max_speed(u) ** (2 * params.alpha)
        if assim is not None and w is not None:
            rate = max(rate, assim.b(params) * sp.max_speed(w) ** (2 * assim.beta))
        if rate > 0:
            limits["damping"] = s / rate
    if assim is not None and assim.eta > 0:
        limits["nudging"] = s / assim.eta
    return limits
