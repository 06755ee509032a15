"""Coupled truth / nudged runs and their error time series."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import spectral as sp
from . import timestepper as ts
from .dynamics import (AssimParams, Forcing, ForcingSpec, PhysicalParams,
                       nonlinear_nudged, nonlinear_truth, rhs_truth)
from .spectral import Grid, SpectralField

TRUTH_COLUMNS = ("t", "u_l2", "u_grad", "u_lp", "u_A", "energy_residual", "u_t_l2",
                 "int_lp", "int_A", "int_grad", "weighted_int_A")
COUPLED_COLUMNS = TRUTH_COLUMNS + ("g_l2", "g_grad", "g_h1", "w_l2", "w_grad")

COLUMN_DOC = {
    "t": "time",
    "u_l2": "||u||_{L^2}",
    "u_grad": "||grad u||_{L^2}",
    "u_lp": "||u||_{L^{2 alpha + 2}}",
    "u_A": "||A u||_{L^2}",
    "energy_residual": "per-step residual of the energy balance (NaN on the first row)",
    "u_t_l2": "||du/dt||_{L^2}",
    "int_lp": "running integral of ||u||_{L^{2 alpha + 2}}^{2 alpha + 2} (per-step trapezoid)",
    "int_A": "running integral of ||A u||^2 (per-step trapezoid)",
    "int_grad": "running integral of ||grad u||^2 (per-step trapezoid)",
    "weighted_int_A": "int_0^t exp(eta (s - t) / 8) ||A u(s)||^2 ds, exact for piecewise-linear "
                      "||A u||^2 between steps; eta is run.eta",
    "g_l2": "||w - u||_{L^2}",
    "g_grad": "||grad(w - u)||_{L^2}",
    "g_h1": "||grad g||^2 + ||g||^2 / l^2",
    "w_l2": "||w||_{L^2}",
    "w_grad": "||grad w||_{L^2}",
}


@dataclass
class CoupledState:
    t: float
    u: SpectralField
    w: SpectralField

    def __post_init__(self):
        self.u._check(self.w)


@dataclass
class RunRecord:
    columns: tuple
    data: np.ndarray  # (samples, columns)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))
        t = self.data[:, 0]
        if t.size > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("record times must be strictly increasing")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name) -> np.ndarray:
        try:
            return self.data[:, self.columns.index(name)]
        except ValueError:
            raise KeyError(f"record has no column {name!r}") from None

    def has(self, *names):
        return all(n in self.columns for n in names)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        for k in sorted(self.meta):
            buf.write(f"# {k} = {self.meta[k]}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for row in self.data:
            w.writerow([repr(float(x)) for x in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "RunRecord":
        meta, lines = {}, []
        with open(path) as fh:
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].strip().partition(" = ")
                    meta[k] = v
                else:
                    lines.append(line)
        rows = list(csv.reader(lines))
        cols = tuple(rows[0])
        data = np.array([[float(x) for x in r] for r in rows[1:]]).reshape(-1, len(cols))
        return cls(cols, data, meta)

    @classmethod
    def concat(cls, first: "RunRecord", second: "RunRecord") -> "RunRecord":
        """Join two records of one trajectory, shifting running integrals of the
        second by the final values of the first."""
        cols = tuple(c for c in first.columns if c in second.columns)
        a = np.column_stack([first[c] for c in cols])
        b = np.column_stack([second[c] for c in cols])
        if len(b) and len(a) and b[0, 0] == a[-1, 0]:
            b = b[1:]
        for c in ("int_lp", "int_A", "int_grad"):
            if c in cols:
                b[:, cols.index(c)] += first[c][-1]
        if "weighted_int_A" in cols and len(a):
            eta = float(first.meta.get("run.eta", 0.0))
            if eta != float(second.meta.get("run.eta", eta)):
                raise ValueError("records were weighted with different eta")
            lag = b[:, 0] - a[-1, 0]
            b[:, cols.index("weighted_int_A")] += (np.exp(-eta / 8 * lag)
                                                   * first["weighted_int_A"][-1])
        return cls(cols, np.vstack([a, b]), dict(first.meta))


def h1_error(g: SpectralField) -> float:
    return sp.grad_norm_sq(g) + sp.l2_norm_sq(g) / g.grid.l ** 2


def estimate_M(u: SpectralField) -> float:
    """``||grad u||^2 + ||u||^2 / l^2``, the smallest admissible M for u."""
    return h1_error(u)


def _as_forcing(grid, forcing):
    if isinstance(forcing, Forcing):
        if forcing.grid != grid:
            raise ValueError("forcing realised on a different grid")
        return forcing
    if isinstance(forcing, ForcingSpec):
        return Forcing(grid, forcing)
    raise TypeError("forcing must be a ForcingSpec or Forcing")


class _TruthMeter:
    """Per-step quantities of the truth system: energy residual and running
    integrals, all on the step grid rather than the sample grid."""

    def __init__(self, p: PhysicalParams, forcing: Forcing, eta: float):
        self.p = p
        self.forcing = forcing
        self.eta = eta
        self.q = 2 * p.alpha + 2
        self.int_lp = 0.0
        self.int_A = 0.0
        self.int_grad = 0.0
        self.weighted = 0.0
        self.residual = math.nan

    def observe(self, u: SpectralField, t: float):
        vals = sp.bwd(u.coeffs, u.grid.n)
        lp = sp.lp_norm_pow(u, self.q, vals)
        grad2 = sp.grad_norm_sq(u)
        A2 = sp.A_norm_sq(u)
        e = 0.5 * sp.l2_norm_sq(u)
        phi = (sp.inner(self.forcing(t), u) - self.p.nu * grad2 - self.p.a * lp)
        return {"t": t, "lp": lp, "grad2": grad2, "A2": A2, "e": e, "phi": phi}

    def start(self, u, t):
        self.last = self.observe(u, t)

    def advance(self, u, t):
        new = self.observe(u, t)
        old = self.last
        dt = new["t"] - old["t"]
        self.residual = (new["e"] - old["e"]) - 0.5 * dt * (old["phi"] + new["phi"])
        self.int_lp += 0.5 * dt * (old["lp"] + new["lp"])
        self.int_A += 0.5 * dt * (old["A2"] + new["A2"])
        self.int_grad += 0.5 * dt * (old["grad2"] + new["grad2"])
        self.weighted = weighted_step(self.weighted, old["A2"], new["A2"], dt, self.eta / 8)
        self.last = new


def weighted_step(acc, y0, y1, h, lam):
    """Advance ``int exp(-lam (t - s)) y(s) ds`` over a step of length h with
    y linear between the end values."""
    x = lam * h
    if x < 1e-6:
        return acc * math.exp(-x) + 0.5 * h * (y0 * math.exp(-x) + y1)
    E = math.exp(-x)
    one = -math.expm1(-x)
    # int_0^h exp(-lam (h - s)) (y0 + (y1 - y0) s / h) ds
    return acc * E + y0 * one / lam + (y1 - y0) * (1 / lam - one / (lam * x))


def _truth_row(u, t, meter: _TruthMeter, p, forcing):
    ut = rhs_truth(u, t, p, forcing)
    last = meter.last
    return [t, math.sqrt(2 * last["e"]), math.sqrt(last["grad2"]),
            last["lp"] ** (1 / meter.q), math.sqrt(last["A2"]), meter.residual,
            sp.l2_norm(ut), meter.int_lp, meter.int_A, meter.int_grad, meter.weighted]


def _r(x):
    return repr(float(x))


def _meta(p, q, forcing, grid, cfg, extra=None):
    m = {
        "grid.n": grid.n, "grid.l": _r(grid.l), "grid.dealias_fraction": _r(grid.dealias_fraction),
        "physical.nu": _r(p.nu), "physical.alpha": _r(p.alpha),
        "physical.a_tilde": _r(p.a_tilde), "physical.a": _r(p.a),
        "forcing.kind": forcing.spec.kind, "forcing.amplitude": _r(forcing.spec.amplitude),
        "forcing.kmin": _r(forcing.spec.kmin), "forcing.kmax": _r(forcing.spec.kmax),
        "forcing.seed": forcing.spec.seed, "forcing.omega": _r(forcing.spec.omega),
        "forcing.sup_norm": _r(forcing.sup_norm),
        "forcing.sup_dt_norm": _r(forcing.sup_dt_norm),
        "stepper.dt": _r(cfg.dt), "stepper.scheme": cfg.scheme,
        "stepper.cfl_safety": _r(cfg.cfl_safety), "stepper.adaptive": cfg.adaptive,
    }
    if q is not None:
        m.update({"assim.beta": _r(q.beta), "assim.b_tilde": _r(q.b_tilde),
                  "assim.b": _r(q.b(p)), "assim.eta": _r(q.eta)})
        if q.interpolant is not None:
            m.update({"interp.kind": q.interpolant.kind, "interp.h": _r(q.interpolant.h),
                      "interp.c0": _r(q.interpolant.c0), "interp.c1": _r(q.interpolant.c1)})
    if extra:
        m.update(extra)
    return m


def _step_sizes(T, cfg, dt_fn):
    """Yield (step, new relative time) pairs ending exactly at T.

    Fixed steps use ``t = k dt`` so times do not drift; a final short step
    is added when T is not a multiple of dt.
    """
    tol = 1e-12 * max(T, 1.0)
    if cfg.adaptive:
        t = 0.0
        while T - t > tol:
            h = min(dt_fn(), T - t)
            t = T if T - (t + h) <= tol else t + h
            yield h, t
        return
    nfix = int(math.floor(T / cfg.dt + 1e-9))
    for k in range(1, nfix + 1):
        yield cfg.dt, min(k * cfg.dt, T)
    rest = T - nfix * cfg.dt
    if rest > tol:
        yield rest, T


# -- truth-only runs ----------------------------------------------------------

def initial_condition(grid: Grid, seed: int, amplitude: float, kmax: float = 3.0) -> SpectralField:
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    return sp.random_field(grid, rng, kmax=kmax, slope=0.0, rms=amplitude)


@dataclass
class SpinUp:
    u: SpectralField
    M: float
    u0: SpectralField
    record: Optional[RunRecord]


def run_truth(p: PhysicalParams, forcing, u0: SpectralField, T: float,
              cfg: ts.StepperConfig, sample_stride: int = 1, eta: float = 0.0,
              t0: float = 0.0):
    """Advance the truth system alone, returning (final state, RunRecord)."""
    if T < 0:
        raise ValueError("T must be >= 0")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    grid = u0.grid
    forcing = _as_forcing(grid, forcing)
    decay = [p.nu * grid.k2]
    meter = _TruthMeter(p, forcing, eta)
    u = u0.copy()
    meter.start(u, t0)
    rows = [_truth_row(u, t0, meter, p, forcing)]

    def nl(t, s):
        return [nonlinear_truth(s[0], t, p, forcing, grid)]

    def dt_fn():
        return ts.stable_dt(u, p, cfg)

    t_prev, k = t0, 0
    for h, t_rel in _step_sizes(T, cfg, dt_fn):
        (c,) = ts.step([u.coeffs], t_prev, h, nl, decay, cfg.scheme, names=["truth"])
        u = SpectralField(grid, c)
        t_prev = t0 + t_rel
        meter.advance(u, t_prev)
        k += 1
        if k % sample_stride == 0:
            rows.append(_truth_row(u, t_prev, meter, p, forcing))
    if k % sample_stride and k:
        rows.append(_truth_row(u, t_prev, meter, p, forcing))
    meta = _meta(p, None, forcing, grid, cfg, {"run.kind": "truth", "run.T": _r(T),
                                               "run.sample_stride": sample_stride,
                                               "run.eta": _r(eta), "run.t0": _r(t0)})
    return u, RunRecord(TRUTH_COLUMNS, np.array(rows), meta)


def spin_up(p: PhysicalParams, forcing, grid: Grid, seed: int, T_spin: float,
            cfg: ts.StepperConfig, ic_amplitude: float = 0.05, record: bool = False,
            sample_stride: int = 1, eta: float = 0.0) -> SpinUp:
    """Advance random low-mode data for ``T_spin`` and return the settled state
    with ``M = ||grad u||^2 + ||u||^2 / l^2`` of that state.

    ``eta`` only sets the weight of the recorded weighted integral.
    """
    if T_spin < 0:
        raise ValueError("T_spin must be >= 0")
    u0 = initial_condition(grid, seed, ic_amplitude)
    if T_spin == 0:
        u, rec = u0.copy(), None
        if record:
            _, rec = run_truth(p, forcing, u0, 0.0, cfg, eta=eta)
    else:
        u, rec = run_truth(p, forcing, u0, T_spin, cfg, sample_stride, eta=eta)
        if not record:
            rec = None
    return SpinUp(u, estimate_M(u), u0, rec)


# -- coupled runs -------------------------------------------------------------

def run_coupled(p: PhysicalParams, q: AssimParams, forcing, u0: SpectralField,
                w0: Optional[SpectralField] = None, T: float = 1.0,
                cfg: Optional[ts.StepperConfig] = None, sample_stride: int = 1,
                M: Optional[float] = None):
    """Advance truth and nudged systems in lockstep; return (CoupledState, RunRecord).

    The truth right-hand side never sees w. ``w0`` defaults to zero. ``M``
    defaults to the value of u0; the hypothesis ``||grad w0||^2 +
    ||w0||^2 / l^2 <= M`` is checked and reported in the metadata.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    if sample_stride < 1:
        raise ValueError("sample_stride must be >= 1")
    if cfg is None:
        cfg = ts.StepperConfig(dt=0.05)
    grid = u0.grid
    forcing = _as_forcing(grid, forcing)
    w = SpectralField.zeros(grid) if w0 is None else w0.copy()
    u0._check(w)
    if q.interpolant is not None:
        from .interpolants import check_compatible
        check_compatible(q.interpolant, grid)
    u = u0.copy()
    M_u = estimate_M(u) if M is None else M
    M_w = estimate_M(w)
    decay = [p.nu * grid.k2] * 2
    meter = _TruthMeter(p, forcing, q.eta)
    meter.start(u, 0.0)

    def row(t):
        g = w - u
        return _truth_row(u, t, meter, p, forcing) + [
            sp.l2_norm(g), math.sqrt(sp.grad_norm_sq(g)), h1_error(g),
            sp.l2_norm(w), math.sqrt(sp.grad_norm_sq(w))]

    def nl(t, s):
        return [nonlinear_truth(s[0], t, p, forcing, grid),
                nonlinear_nudged(s[1], s[0], t, p, q, forcing, grid)]

    def dt_fn():
        return ts.stable_dt(u, p, cfg, q, w)

    rows = [row(0.0)]
    t, k = 0.0, 0
    for h, t_new in _step_sizes(T, cfg, dt_fn):
        cu, cw = ts.step([u.coeffs, w.coeffs], t, h, nl, decay, cfg.scheme,
                         names=["truth", "nudged"])
        u, w = SpectralField(grid, cu), SpectralField(grid, cw)
        t = t_new
        meter.advance(u, t)
        k += 1
        if k % sample_stride == 0:
            rows.append(row(t))
    if k % sample_stride and k:
        rows.append(row(t))
    meta = _meta(p, q, forcing, grid, cfg, {
        "run.kind": "coupled", "run.T": _r(T), "run.sample_stride": sample_stride,
        "run.eta": _r(q.eta),
        "run.M": _r(M_u), "run.M_w0": _r(M_w), "run.w0_hypothesis": M_w <= M_u})
    return CoupledState(t, u, w), RunRecord(COUPLED_COLUMNS, np.array(rows), meta)


# -- decay / plateau fit ------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    rate: float  # decay rate of the squared error; nan when flagged
    plateau: float  # plateau of the squared error
    decaying: bool
    t_start: float = math.nan
    t_end: float = math.nan

    @property
    def plateau_norm(self):
        return math.sqrt(self.plateau)


def fit_decay_and_plateau(rec_or_t, values=None, column="g_l2") -> DecayFit:
    """Fit ``||g||^2 ~ exp(-rate t)`` over the initial transient.

    Either pass a RunRecord (its ``column`` is squared) or explicit arrays of
    times and squared error values. The plateau is the median of the final
    20% of samples; the slope uses the samples from the largest value up to
    the first one below 10x plateau, with the plateau subtracted.
    """
    if values is None:
        t = np.asarray(rec_or_t["t"], float)
        v = np.asarray(rec_or_t[column], float) ** 2
    else:
        t = np.asarray(rec_or_t, float)
        v = np.asarray(values, float)
    if t.size < 10:
        raise ValueError("need at least 10 samples to fit a decay")
    tail = v[int(math.floor(0.8 * v.size)):]
    plateau = float(np.median(tail))
    above = v > 10 * plateau
    if not above.any():
        return DecayFit(math.nan, plateau, False)
    i0 = int(np.argmax(np.where(above, v, -np.inf)))
    below = np.nonzero(~above[i0:])[0]
    i1 = i0 + (int(below[0]) if below.size else v.size - i0)
    seg = slice(i0, i1)
    ts_, vs = t[seg], v[seg] - plateau
    if ts_.size < 3 or not np.all(vs > 0):
        return DecayFit(math.nan, plateau, False)
    slope = np.polyfit(ts_, np.log(vs), 1)[0]
    if not slope < 0:
        return DecayFit(math.nan, plateau, False)
    return DecayFit(float(-slope), plateau, True, float(ts_[0]), float(ts_[-1]))
