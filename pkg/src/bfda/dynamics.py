"""Right-hand sides of the damped Navier-Stokes (Brinkman-Forchheimer) system
and of its nudged copy.

Truth:   du/dt = P f - nu A u - B(u, u) - a G_alpha(u)
Nudged:  dw/dt = P f - nu A w - B(w, w) - b G_beta(w) + eta P(I_h u - I_h w)

with ``G_gamma(u) = |u|^(2 gamma) u`` and ``B(u, v) = P(u . grad v)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize

from . import spectral as sp
from .spectral import Grid, SpectralField


@dataclass(frozen=True)
class PhysicalParams:
    """Viscosity, period and dimensionless damping of the truth system.

    The dimensional damping coefficient ``a = a_tilde l^(2 alpha - 2) /
    nu^(2 alpha - 1)`` is derived, never stored.
    """

    nu: float
    l: float
    alpha: float
    a_tilde: float

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"physical.nu must be > 0, got {self.nu}")
        if not self.l > 0:
            raise ValueError(f"physical.l must be > 0, got {self.l}")
        if not self.alpha > 1:
            raise ValueError(f"physical.alpha must be > 1, got {self.alpha}")
        if not self.a_tilde > 0:
            raise ValueError(f"physical.a_tilde must be > 0, got {self.a_tilde}")

    @property
    def a(self) -> float:
        return dimensional_coeff(self.a_tilde, self.alpha, self.l, self.nu)


def dimensional_coeff(tilde, exponent, l, nu):
    return tilde * l ** (2 * exponent - 2) / nu ** (2 * exponent - 1)


@dataclass(frozen=True)
class AssimParams:
    beta: float
    b_tilde: float
    eta: float
    interpolant: Optional[object] = None  # InterpolantSpec; None means I_h = identity

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError(f"assim.beta must be > 1, got {self.beta}")
        if not self.b_tilde > 0:
            raise ValueError(f"assim.b_tilde must be > 0, got {self.b_tilde}")
        if self.eta < 0:
            raise ValueError(f"assim.eta must be >= 0, got {self.eta}")

    def b(self, p: PhysicalParams) -> float:
        return dimensional_coeff(self.b_tilde, self.beta, p.l, p.nu)

    @classmethod
    def matched(cls, p: PhysicalParams, eta, interpolant=None):
        return cls(beta=p.alpha, b_tilde=p.a_tilde, eta=eta, interpolant=interpolant)


FORCING_KINDS = ("zero", "taylor-green-like", "random-low-mode")


@dataclass(frozen=True)
class ForcingSpec:
    """Body force description.

    ``amplitude`` is the RMS force, ``||f||_{L^2} = amplitude * l^(3/2)``.
    With ``omega > 0`` the spatial pattern is modulated by
    ``1 + 0.5 sin(omega t)``, which keeps both f and f_t bounded.
    """

    kind: str = "random-low-mode"
    amplitude: float = 0.0
    kmin: float = 1.0
    kmax: float = 2.0
    seed: int = 0
    omega: float = 0.0

    def __post_init__(self):
        if self.kind not in FORCING_KINDS:
            raise ValueError(f"forcing.kind must be one of {FORCING_KINDS}, got {self.kind!r}")
        if self.amplitude < 0:
            raise ValueError("forcing.amplitude must be >= 0")
        if not 0 <= self.kmin <= self.kmax:
            raise ValueError("forcing mode range needs 0 <= kmin <= kmax")
        if self.omega < 0:
            raise ValueError("forcing.omega must be >= 0")


class Forcing:
    """Forcing realised on a grid: divergence-free, zero-mean, dealiased."""

    def __init__(self, grid: Grid, spec: ForcingSpec):
        self.grid = grid
        self.spec = spec
        self.pattern = self._build()
        self.pattern_norm = sp.l2_norm(self.pattern)

    def _build(self):
        g, s = self.grid, self.spec
        if s.kind == "zero" or s.amplitude == 0:
            return SpectralField.zeros(g)
        if s.kind == "taylor-green-like":
            k = 2 * np.pi / g.l * max(1.0, round(s.kmin))
            f = sp.from_function(g, lambda x, y, z: (
                np.sin(k * x) * np.cos(k * y) * np.cos(k * z),
                -np.cos(k * x) * np.sin(k * y) * np.cos(k * z),
                0.0 * x))
        else:
            rng = np.random.default_rng(s.seed)
            shape = g.spectral_shape
            c = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            mx, my, mz = g.mode_indices
            m = np.sqrt(mx ** 2 + my ** 2 + mz ** 2)
            shell = (m >= max(s.kmin, 1e-12)) & (m <= s.kmax)
            c = c * shell
            c = sp.fwd(sp.bwd(c, g.n))
            f = SpectralField(g, c)
        f = sp.dealias(sp.leray_project(f))
        f.coeffs[:, 0, 0, 0] = 0.0
        norm = sp.l2_norm(f)
        if norm == 0:
            raise ValueError("forcing mode range contains no retained modes")
        return f * (s.amplitude * g.l ** 1.5 / norm)

    def modulation(self, t):
        if self.spec.omega > 0:
            return 1.0 + 0.5 * np.sin(self.spec.omega * t)
        return 1.0

    def coeffs(self, t):
        return self.pattern.coeffs * self.modulation(t)

    def __call__(self, t) -> SpectralField:
        return SpectralField(self.grid, self.coeffs(t))

    @property
    def sup_norm(self):
        """sup_t ||f(t)||_{L^2}."""
        return self.pattern_norm * (1.5 if self.spec.omega > 0 else 1.0)

    @property
    def sup_dt_norm(self):
        """sup_t ||f_t(t)||_{L^2}."""
        return 0.5 * self.spec.omega * self.pattern_norm

    @property
    def is_zero(self):
        return self.pattern_norm == 0


# -- nonlinear operators ------------------------------------------------------

def _finish(grid, phys):
    """Forward transform, project and dealias a physical-space product."""
    c = sp.fwd(phys)
    return sp.project_coeffs(grid, c) * grid.dealias_mask


def advection(u: SpectralField, v: SpectralField) -> SpectralField:
    """B(u, v) = P(u . grad v), evaluated pseudo-spectrally."""
    u._check(v)
    g = u.grid
    uu = sp.bwd(u.coeffs, g.n)
    grad = sp.bwd(sp.gradient(v), g.n)  # grad[i, j] = d_j v_i
    prod = np.einsum("jxyz,ijxyz->ixyz", uu, grad)
    return SpectralField(g, _finish(g, prod))


def _power_term(values, gamma):
    """|u|^(2 gamma) u pointwise, with 0^0 and 0^negative read as 0."""
    mag2 = np.sum(values ** 2, axis=0)
    if gamma == 0:
        return values.copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(mag2 > 0, mag2 ** gamma, 0.0)
    return fac * values


def damping(u: SpectralField, gamma: float, coeff: float = 1.0) -> SpectralField:
    """coeff * P(|u|^(2 gamma) u), projected and dealiased."""
    if gamma < 0:
        raise ValueError(f"damping exponent must be >= 0, got {gamma}")
    if coeff < 0:
        raise ValueError(f"damping coefficient must be >= 0, got {coeff}")
    vals = sp.bwd(u.coeffs, u.grid.n)
    return SpectralField(u.grid, _finish(u.grid, coeff * _power_term(vals, gamma)))


def self_terms(grid: Grid, c: np.ndarray, gamma: float, coeff: float,
               values: np.ndarray | None = None) -> np.ndarray:
    """Coefficients of B(u, u) + coeff G_gamma(u) in one pass.

    Uses the rotational form: P(u . grad u) = P(omega x u) since the gradient
    of |u|^2/2 is removed by the projection.
    """
    return sp.project_coeffs(grid, _self_terms_unprojected(grid, c, gamma, coeff, values))


def _self_terms_unprojected(grid, c, gamma, coeff, values=None):
    if values is None:
        values = sp.bwd(c, grid.n)
    omega = sp.bwd(sp.curl_coeffs(grid, c), grid.n)
    phys = np.empty_like(values)
    phys[0] = omega[1] * values[2] - omega[2] * values[1]
    phys[1] = omega[2] * values[0] - omega[0] * values[2]
    phys[2] = omega[0] * values[1] - omega[1] * values[0]
    if coeff:
        phys += coeff * _power_term(values, gamma)
    return sp.fwd(phys) * grid.dealias_mask


def nonlinear_truth(c, t, p: PhysicalParams, forcing: Forcing, grid: Grid):
    """Everything in the truth RHS except -nu A u, on raw coefficients."""
    return forcing.coeffs(t) - self_terms(grid, c, p.alpha, p.a)


def nonlinear_nudged(c, c_obs, t, p: PhysicalParams, q: AssimParams, forcing: Forcing,
                     grid: Grid):
    # one projection for both terms; the interpolant output is already dealiased
    terms = _self_terms_unprojected(grid, c, q.beta, q.b(p))
    if q.eta:
        feedback = _interp_coeffs(q.interpolant, grid, c_obs - c)
        terms = q.eta * (feedback * grid.dealias_mask) - terms
    else:
        terms = -terms
    return forcing.coeffs(t) + sp.project_coeffs(grid, terms)


def _interp_coeffs(spec, grid, c):
    if spec is None:
        return c
    from .interpolants import apply_interpolant
    return apply_interpolant(spec, SpectralField(grid, c)).coeffs


def rhs_truth(u: SpectralField, t: float, p: PhysicalParams, forcing: Forcing) -> SpectralField:
    g = u.grid
    c = nonlinear_truth(u.coeffs, t, p, forcing, g) - p.nu * g.k2 * u.coeffs
    return SpectralField(g, c)


def rhs_nudged(w: SpectralField, u_obs: SpectralField, t: float, p: PhysicalParams,
               q: AssimParams, forcing: Forcing) -> SpectralField:
    w._check(u_obs)
    g = w.grid
    c = nonlinear_nudged(w.coeffs, u_obs.coeffs, t, p, q, forcing, g) - p.nu * g.k2 * w.coeffs
    return SpectralField(g, c)


# -- pointwise damping inequalities ------------------------------------------

def _pow_vec(x, gamma):
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(r > 0, r ** gamma, 0.0)
    return fac * x


def damping_inequality_sides(x, y, gamma):
    """Both sides of the monotonicity and Lipschitz-type inequalities.

    Returns ``(mono_lhs, mono_rhs, lip_lhs, lip_unit)`` where the
    monotonicity inequality reads ``mono_lhs >= mono_rhs`` and the
    Lipschitz one ``lip_lhs <= kappa * lip_unit``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fx, fy = _pow_vec(x, gamma), _pow_vec(y, gamma)
    d = x - y
    rx = np.linalg.norm(x, axis=-1)
    ry = np.linalg.norm(y, axis=-1)
    nd = np.linalg.norm(d, axis=-1)
    mono_lhs = np.sum((fx - fy) * d, axis=-1)
    mono_rhs = 0.5 * nd ** 2 * (rx ** gamma + ry ** gamma)
    lip_lhs = np.linalg.norm(fx - fy, axis=-1)
    lip_unit = nd * (rx + ry) ** gamma
    return mono_lhs, mono_rhs, lip_lhs, lip_unit


def pointwise_damping_inequalities(x, y, gamma, kappa, rtol=1e-12):
    """Whether ``(|x|^g x - |y|^g y).(x - y) >= |x-y|^2 (|x|^g + |y|^g) / 2``
    and ``||x|^g x - |y|^g y| <= kappa |x - y| (|x| + |y|)^g`` hold.

    Works elementwise on stacked vectors (last axis of length 3). A relative
    slack ``rtol`` absorbs floating point rounding.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    a, b, c, d = damping_inequality_sides(x, y, gamma)
    scale = np.maximum(np.abs(a), np.abs(b))
    mono = a >= b - rtol * scale
    lip = c <= kappa * d * (1 + rtol) + rtol * np.abs(c)
    return mono, lip


def _ratio(x, y, gamma):
    _, _, c, d = damping_inequality_sides(x, y, gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d > 0, c / d, 0.0)


def estimate_kappa(gamma: float, samples: int = 200_000, seed: int = 0) -> float:
    """Smallest admissible kappa(gamma), estimated by maximising the ratio.

    The ratio is invariant under rotations and common scalings, so it only
    depends on r = |y|/|x| in [0, 1] and the angle between x and y. A dense
    scan of that square is polished with a bounded optimiser and combined
    with a random search.
    """
    def ratio_rt(r, th):
        x = np.array([1.0, 0.0, 0.0])
        y = np.array([r * np.cos(th), r * np.sin(th), 0.0])
        return float(_ratio(x, y, gamma))

    rs = np.linspace(0.0, 1.0, 201)
    ths = np.linspace(0.0, np.pi, 201)
    R, TH = np.meshgrid(rs, ths, indexing="ij")
    x = np.broadcast_to(np.array([1.0, 0.0, 0.0]), R.shape + (3,))
    y = np.stack([R * np.cos(TH), R * np.sin(TH), np.zeros_like(R)], axis=-1)
    grid_ratio = _ratio(x, y, gamma)
    i, j = np.unravel_index(np.argmax(grid_ratio), grid_ratio.shape)
    best = float(grid_ratio[i, j])
    res = optimize.minimize(lambda v: -ratio_rt(v[0], v[1]), x0=[rs[i], ths[j]],
                            bounds=[(0.0, 1.0), (0.0, np.pi)], method="L-BFGS-B")
    best = max(best, -float(res.fun))
    rng = np.random.default_rng(seed)
    xs = rng.standard_normal((samples, 3))
    ys = rng.standard_normal((samples, 3)) * rng.exponential(1.0, (samples, 1))
    best = max(best, float(np.max(_ratio(xs, ys, gamma))))
    return best * (1 + 1e-9)
