"""Self-check suite behind ``bfda verify``: operator identities, damping and
interpolant inequalities, and time-stepping orders on a small grid."""

from __future__ import annotations

import contextlib
import math
import time
from dataclasses import dataclass
from typing import Callable, List

import numpy as np

from . import dynamics as dy
from . import interpolants as ip
from . import spectral as sp
from . import timestepper as ts


@dataclass
class PropertyResult:
    name: str
    ok: bool
    detail: str
    seconds: float = 0.0


def _rel(a, b, scale):
    return abs(a - b) / scale if scale > 0 else abs(a - b)


def _fields(grid, count, seed, **kw):
    rng = np.random.default_rng(seed)
    return [sp.random_field(grid, rng, **kw) for _ in range(count)]


def check_leray(grid, count=20, seed=0):
    worst_idem, worst_div = 0.0, 0.0
    for g in _fields(grid, count, seed, solenoidal=False):
        p1 = sp.leray_project(g)
        p2 = sp.leray_project(p1)
        scale = np.max(np.abs(p1.coeffs)) or 1.0
        worst_idem = max(worst_idem, np.max(np.abs(p2.coeffs - p1.coeffs)) / scale)
        kmag = np.sqrt(grid.k2)
        umag = np.sqrt(np.sum(np.abs(p1.coeffs) ** 2, axis=0))
        div = np.abs(sp.divergence(p1))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(kmag * umag > 0, div / (kmag * umag), 0.0)
        worst_div = max(worst_div, float(r.max()))
    ok = worst_idem <= 1e-12 and worst_div <= 1e-12
    return ok, f"idempotence {worst_idem:.2e}, divergence {worst_div:.2e}"


def _b_scale(u, v, w):
    return sp.l2_norm(dy.advection(u, v)) * sp.l2_norm(w) + \
        sp.l2_norm(dy.advection(u, w)) * sp.l2_norm(v)


def check_skew_symmetry(grid, count=20, seed=1):
    worst = 0.0
    fs = _fields(grid, 3 * count, seed)
    for i in range(count):
        u, v, w = fs[3 * i:3 * i + 3]
        lhs = sp.inner(dy.advection(u, v), w)
        rhs = -sp.inner(dy.advection(u, w), v)
        worst = max(worst, _rel(lhs, rhs, _b_scale(u, v, w)))
    return worst <= 1e-10, f"max relative defect {worst:.2e}"


def check_energy_orthogonality(grid, count=20, seed=2):
    worst = 0.0
    fs = _fields(grid, 2 * count, seed)
    for i in range(count):
        u, w = fs[2 * i:2 * i + 2]
        b = dy.advection(u, w)
        worst = max(worst, abs(sp.inner(b, w)) / (sp.l2_norm(b) * sp.l2_norm(w)))
    return worst <= 1e-10, f"max relative defect {worst:.2e}"


def check_difference_identity(grid, count=20, seed=3):
    worst = 0.0
    fs = _fields(grid, 2 * count, seed)
    for i in range(count):
        u, v = fs[2 * i:2 * i + 2]
        d = u - v
        lhs = sp.inner(dy.advection(u, u) - dy.advection(v, v), d)
        rhs = -0.5 * sp.inner(dy.advection(d, d), u + v)
        scale = (sp.l2_norm(dy.advection(u, u)) + sp.l2_norm(dy.advection(v, v))) * sp.l2_norm(d)
        worst = max(worst, _rel(lhs, rhs, scale))
    return worst <= 1e-10, f"max relative defect {worst:.2e}"


def check_parseval(grid, count=10, seed=4):
    worst = 0.0
    for g in _fields(grid, count, seed):
        vals = sp.bwd(g.coeffs, grid.n)
        quad = float(np.sum(vals ** 2)) * grid.dx ** 3
        worst = max(worst, _rel(quad, sp.l2_norm_sq(g), quad))
    return worst <= 1e-12, f"max relative defect {worst:.2e}"


def check_stokes(grid, count=10, seed=5):
    worst, neg = 0.0, 0
    for g in _fields(grid, count, seed):
        a = sp.inner(sp.apply_A(g), g)
        neg += a < 0
        worst = max(worst, _rel(a, sp.grad_norm_sq(g), a))
    return worst <= 1e-12 and neg == 0, f"<Au,u> vs ||grad u||^2 {worst:.2e}, negatives {neg}"


def check_damping_monotone(grid, count=10, seed=6):
    worst = 0.0
    fs = _fields(grid, 2 * count, seed)
    for gamma in (0.5, 1.0, 2.0, 3.0):
        for i in range(count):
            u, v = fs[2 * i:2 * i + 2]
            d = u - v
            val = sp.inner(dy.damping(u, gamma) - dy.damping(v, gamma), d)
            scale = (sp.l2_norm(dy.damping(u, gamma)) + sp.l2_norm(dy.damping(v, gamma))) \
                * sp.l2_norm(d)
            worst = min(worst, val / scale)
    return worst >= -1e-10, f"most negative normalised value {worst:.2e}"


def check_pointwise_damping(samples=100_000, seed=7):
    rng = np.random.default_rng(seed)
    parts = []
    ok = True
    for gamma in (0.5, 1.0, 2.0, 3.0):
        x = rng.standard_normal((samples, 3)) * rng.exponential(1.0, (samples, 1))
        y = rng.standard_normal((samples, 3)) * rng.exponential(1.0, (samples, 1))
        kappa = dy.estimate_kappa(gamma, samples=samples, seed=seed + 1)
        mono, lip = dy.pointwise_damping_inequalities(x, y, gamma, kappa)
        bad = int((~mono).sum() + (~lip).sum())
        ok &= bad == 0
        parts.append(f"gamma={gamma}: kappa={kappa:.4f}, violations={bad}")
    return ok, "; ".join(parts)


def check_interpolants(grid, trials=20, seed=8):
    ok, parts = True, []
    for kind in ip.KINDS:
        spec = ip.InterpolantSpec(kind, grid.l / 4)
        rep = ip.verify_inequality(spec, grid, trials, seed)
        ok &= rep.holds
        parts.append(f"{kind}: worst lhs/declared {rep.max_violation:.3f}")
    return ok, "; ".join(parts)


def check_viscous_decay(grid, nu=0.1, T=1.0, dt=0.1):
    c = np.zeros(grid.spectral_shape, dtype=complex)
    c[1, 2, 0, 0] = 0.5
    c[1, -2, 0, 0] = 0.5
    decay = [nu * grid.k2]
    state = [c]
    for k in range(int(round(T / dt))):
        state = ts.step(state, k * dt, dt, lambda t, s: [np.zeros_like(s[0])], decay)
    kk = grid.k2[2, 0, 0]
    err = np.max(np.abs(state[0] - c * math.exp(-nu * kk * T)))
    return err <= 1e-12, f"max error {err:.2e}"


def linear_mode_order(lam=-1.0 + 2.0j, d=1.5, T=1.0, dts=(0.1, 0.05, 0.025)):
    """Observed orders of IF-RK3 on ``y' = -d y + lam y``."""
    errs = []
    for dt in dts:
        y = [np.array([1.0 + 0j])]
        dec = [np.array([d])]
        n = int(round(T / dt))
        for k in range(n):
            y = ts.step(y, k * dt, dt, lambda t, s: [lam * s[0]], dec)
        errs.append(abs(y[0][0] - np.exp((lam - d) * T)))
    return [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]


def self_convergence_order(grid, dt=0.1, T=1.0, seed=9):
    """Order from the dt, dt/2, dt/4 triplet on the full nonlinear system."""
    # a of order one, so damping and advection both matter at this dt
    p = dy.PhysicalParams(nu=0.05, l=grid.l, alpha=1.5, a_tilde=5e-4)
    forcing = dy.Forcing(grid, dy.ForcingSpec("random-low-mode", 0.2, 1, 2, seed=seed))
    u0 = sp.random_field(grid, np.random.default_rng(seed), kmax=4, rms=0.5)
    decay = [p.nu * grid.k2]

    def nl(t, s):
        return [dy.nonlinear_truth(s[0], t, p, forcing, grid)]

    out = []
    for h in (dt, dt / 2, dt / 4):
        s = [u0.coeffs]
        for k in range(int(round(T / h))):
            s = ts.step(s, k * h, h, nl, decay)
        out.append(sp.SpectralField(grid, s[0]))
    e1 = sp.l2_norm(out[0] - out[1])
    e2 = sp.l2_norm(out[1] - out[2])
    return math.log2(e1 / e2)



def check_orders(grid):
    lin = linear_mode_order()
    full = self_convergence_order(grid)
    ok = all(abs(o - 3.0) <= 0.2 for o in lin) and full >= 2.7
    return ok, f"linear-mode orders {', '.join(f'{o:.3f}' for o in lin)}; full system {full:.3f}"


PROPERTIES: List[tuple] = [
    ("leray-projection", check_leray),
    ("skew-symmetry", check_skew_symmetry),
    ("energy-orthogonality", check_energy_orthogonality),
    ("difference-identity", check_difference_identity),
    ("parseval", check_parseval),
    ("stokes-operator", check_stokes),
    ("damping-monotonicity", check_damping_monotone),
    ("pointwise-damping", lambda g: check_pointwise_damping()),
    ("interpolant-inequality", check_interpolants),
    ("viscous-decay", check_viscous_decay),
    ("time-order", check_orders),
]


def run_suite(n: int = 16, log: Callable[[str], None] = print) -> List[PropertyResult]:
    grid = sp.Grid(2 * math.pi, n)
    results = []
    for name, fn in PROPERTIES:
        t0 = time.perf_counter()
        try:
            ok, detail = fn(grid)
        except Exception as exc:  # a crash counts as a failure of that property
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        r = PropertyResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(r)
        if log:
            log(f"{'PASS' if r.ok else 'FAIL'} {name}: {detail} ({r.seconds:.1f}s)")
    return results


def _faulty_projection(grid, c):
    # drops 10% of the gradient part, so the output keeps some divergence
    kx, ky, kz = grid.wavenumbers
    kdotc = 0.9 * (kx * c[0] + ky * c[1] + kz * c[2]) * grid.inv_k2
    return np.stack([c[0] - kx * kdotc, c[1] - ky * kdotc, c[2] - kz * kdotc])


FAULTS = {"leray": ("project_coeffs", _faulty_projection)}


@contextlib.contextmanager
def injected_fault(name):
    """Temporarily replace a spectral kernel with a broken one."""
    if name is None:
        yield
        return
    if name not in FAULTS:
        raise ValueError(f"unknown fault {name!r}; choices: {sorted(FAULTS)}")
    attr, fake = FAULTS[name]
    original = getattr(sp, attr)
    setattr(sp, attr, fake)
    try:
        yield
    finally:
        setattr(sp, attr, original)
