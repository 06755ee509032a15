"""Closed-form a-priori and synchronization constants, hypothesis checks and
their empirical verification on recorded trajectories.

Every constant is evaluated with mpmath so that quantities such as
``B = exp(2^13 kappa^2 ... M2)`` stay representable; serialized values are
decimal strings with an arbitrary exponent plus a separate ``log10`` entry.
Formulas are transcribed literally, including the places where the source
looks inconsistent; those places are listed in ``SUSPECTED_TYPOS`` and are
carried into every report.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional

import mpmath
import numpy as np

from .dynamics import AssimParams, PhysicalParams

_DPS = 40

SUSPECTED_TYPOS = (
    ("M8", "the stated M8 has 2^(4a/(2-a)) / nu^(2/(2-a)) and 2^10 C4^8, while the last "
           "display of its derivation gives 2^((5a-2)/(2-a)) / nu^(a/(2-a)) and 432 C4^8; "
           "the stated form is used"),
    ("M5_M6", "M5 contains M1 M2 / (l^2 nu) where M6 contains M1 M2 / (l nu); the second "
              "is dimensionally inconsistent; both are used as stated"),
    ("Ztilde1", "the second term of Ztilde1 is 4 Cinf^2 M2 / nu while the corresponding "
                "term of Z1 is 4 Cinf^2 M2 / (l nu); the Ztilde1 form is used"),
    ("Ztilde1_L2", "Ztilde1 contains (l^2 4H)^(2 beta) with a stray L^2 subscript; read as "
                   "(4 l^2 H)^(2 beta), the bound on ||w||^(4 beta)"),
    ("Ctilde_Dtilde", "the weighted integrals of Z4 and Z6 are bounded with 8/eta and 1/eta, "
                      "but Ctilde uses 1/eta for the Z4 part; Ctilde and Dtilde are used as "
                      "stated"),
    ("A1", "A1 uses M2^7 inside its bracket where A0 uses (M2 + M1/l^2)^5; transcribed "
           "literally"),
)

CONSTANT_ORDER = ("K", "M", "M1", "Mtilde", "M2", "M3", "M4", "M5", "M6", "M7", "M8", "K2",
                  "A0", "A1", "thm31_coef_alpha", "thm31_coef_a", "Q", "Z2_coef", "Z3",
                  "Z4_coef", "Z5", "Z6_coef", "logB", "B", "C", "D", "Ctilde", "Dtilde", "H",
                  "Ztilde1", "kappa", "F", "Ft")


@dataclass(frozen=True)
class BoundsConfig:
    """Gagliardo-Nirenberg constants, kappa(2 beta) and forcing norms.

    ``kappa``, ``f_norm`` and ``ft_norm`` may be left as None and filled by
    ``resolve``.
    """

    C3: float = 1.0
    C4: float = 1.0
    C6: float = 1.0
    C42_5: float = 1.0
    C10: float = 1.0
    C6beta: float = 1.0
    Cinf: float = 1.0
    kappa: Optional[float] = None
    f_norm: Optional[float] = None
    ft_norm: Optional[float] = None

    def __post_init__(self):
        for name in ("C3", "C4", "C6", "C42_5", "C10", "C6beta", "Cinf"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"bounds.{name} must be positive and finite, got {v}")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("bounds.kappa must be > 0")
        for name in ("f_norm", "ft_norm"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"bounds.{name} must be >= 0")

    def resolve(self, beta: Optional[float] = None, forcing=None) -> "BoundsConfig":
        kw = {}
        if self.kappa is None and beta is not None:
            from .dynamics import estimate_kappa
            kw["kappa"] = estimate_kappa(2 * beta)
        if self.f_norm is None:
            kw["f_norm"] = float(forcing.sup_norm) if forcing is not None else 0.0
        if self.ft_norm is None:
            kw["ft_norm"] = float(forcing.sup_dt_norm) if forcing is not None else 0.0
        return replace(self, **kw)


def _mp(x):
    return mpmath.mpf(x)


def _need(cfg, *names):
    for n in names:
        if getattr(cfg, n) is None:
            raise ValueError(f"BoundsConfig.{n} is unresolved; call cfg.resolve(...)")


# -- a-priori ladder ----------------------------------------------------------

def eval_K(p: PhysicalParams, cfg: BoundsConfig):
    _need(cfg, "f_norm")
    with mpmath.workdps(_DPS):
        nu, l, al, a, F = _mp(p.nu), _mp(p.l), _mp(p.alpha), _mp(p.a), _mp(cfg.f_norm)
        return +(l ** 2 / nu * F ** 2
                 + 4 * nu ** ((al + 1) / al) / (a ** (1 / al) * l ** ((2 - al) / al)))


def _scales(nu, a, al):
    s0 = nu ** (al / (al - 1)) * a ** (1 / (al - 1))
    s1 = nu ** ((2 * al - 1) / (al - 1)) * a ** (1 / (al - 1))
    s2 = nu ** ((3 * al - 2) / (al - 1)) * a ** (1 / (al - 1))
    return s0, s1, s2


def eval_M_ladder(p: PhysicalParams, cfg: BoundsConfig, M) -> Dict[str, Optional[mpmath.mpf]]:
    """M1..M8 and K2; M5..M8 and K2 are None unless 1 < alpha < 2."""
    _need(cfg, "f_norm", "ft_norm")
    if not M > 0:
        raise ValueError("M must be > 0")
    with mpmath.workdps(_DPS):
        nu, l, al, a = _mp(p.nu), _mp(p.l), _mp(p.alpha), _mp(p.a)
        F, Ft, M = _mp(cfg.f_norm), _mp(cfg.ft_norm), _mp(M)
        K = eval_K(p, cfg)
        s0, s1, s2 = _scales(nu, a, al)
        out = {"K": K, "M": M}
        M1 = l ** 2 * M + l ** 2 * K / nu
        Mt = max(
            (l ** 4 / nu ** 3 * F ** 2
             + 4 * l ** ((3 * al - 2) / al) / (nu ** ((al - 1) / al) * a ** (1 / al))) / s0,
            l ** 2 * M / (2 * s1) + K * (3 / (2 * nu) + 3 * l ** 2 / (2 * s2)))
        M2 = l ** 2 / nu ** 2 * F ** 2 + M + Mt
        M3 = 2 * M2 / s1 + 4 * F ** 2 / nu ** 2
        M4 = (2 * l ** 2 / (a * nu) * F ** 2
              + 2 ** ((1 + al) / al) * nu ** ((al + 1) / al) * l ** ((al - 2) / al)
              / a ** ((1 + al) / al))
        out.update(M1=M1, Mtilde=Mt, M2=M2, M3=M3, M4=M4)
        if not 1 < p.alpha < 2:
            out.update(M5=None, M6=None, M7=None, M8=None, K2=None)
            return out
        Ci = _mp(cfg.Cinf)
        c = _mp(cfg.C3) * _mp(cfg.C6)
        common = 4 * l ** 2 / nu ** 3 * M2 ** 3 + 2 * nu * M2 + l ** 2 * nu * M3
        M5 = (nu / (a * l ** 2) * M1 + M4 + nu * (al + 1) / a * M2
              + (2 * al + 2) * l ** 2 / (a * nu) * F ** 2
              + 4 * Ci ** 2 * (2 * al + 2) / a * (common + M1 * M2 / (l ** 2 * nu)))
        M6 = (nu * M2 + a / (al + 1) * M5 + 2 * l ** 2 / nu * F ** 2
              + 8 * Ci ** 2 * (common + M1 * M2 / (l * nu)))
        M7 = (M6 * (3 * nu / (2 * l ** 2) + 108 * c ** 4 / nu ** 3 * M2 ** 2
                    + 6 * c ** (mpmath.mpf(4) / 3) / (nu ** (mpmath.mpf(1) / 3)
                                                      * l ** (mpmath.mpf(4) / 3))
                    * M2 ** (mpmath.mpf(2) / 3)
                    + 4 * c ** 2 / (nu * l) * M2 + 2 * c / l ** (mpmath.mpf(3) / 2) * mpmath.sqrt(M2))
              + 2 * l ** 4 / nu ** 2 * Ft ** 2)
        C4 = _mp(cfg.C4)
        M8 = (2 / nu * M7
              + 2 ** 10 * C4 ** 8 / nu ** 4 * (mpmath.sqrt(M1) * M2 ** (mpmath.mpf(3) / 2)
                                               + M1 ** 2 / l ** 3) * mpmath.sqrt(M2)
              + 2 ** (4 * al / (2 - al)) * a ** (2 / (2 - al)) * M5 ** (1 / (2 - al))
              * Ci ** (2 * al / (2 - al)) / nu ** (2 / (2 - al)) * M2 ** (al / (4 - 2 * al))
              + 2 ** al * a * mpmath.sqrt(M5) * Ci ** al / (nu * l ** (3 * al / 2)) * M1 ** (al / 2)
              + 2 / nu * F)
        K2 = (nu / (4 * l ** 2) + 54 * c ** 4 / nu ** 3 * M2 ** 2
              + 3 * c ** (mpmath.mpf(4) / 3) / (nu ** (mpmath.mpf(1) / 3) * l ** (mpmath.mpf(4) / 3))
              * M2 ** (mpmath.mpf(2) / 3)
              + 2 * c ** 2 / (nu * l) * M2 + c / l ** (mpmath.mpf(3) / 2) * mpmath.sqrt(M2))
        out.update(M5=M5, M6=M6, M7=M7, M8=M8, K2=K2)
        return out


def weighted_dissipation_bound(p: PhysicalParams, cfg: BoundsConfig, M, eta):
    """Bound on int_0^t exp(eta (s - t) / 8) ||A u(s)||^2 ds."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    with mpmath.workdps(_DPS):
        lad = eval_M_ladder(p, cfg, M)
        nu, al, a, F, eta = _mp(p.nu), _mp(p.alpha), _mp(p.a), _mp(cfg.f_norm), _mp(eta)
        _, _, s2 = _scales(nu, a, al)
        M2 = lad["M2"]
        return +(4 / nu * M2 + 16 / (eta * s2) * M2 + 32 / (eta * nu ** 2) * F ** 2)


# -- L2 synchronization constants --------------------------------------------

@dataclass
class Thm31:
    branch: str  # "A0" (both exponents < 2) or "A1"
    A0: mpmath.mpf
    A1: mpmath.mpf
    coef_alpha: mpmath.mpf  # multiplies |alpha - beta|^2
    coef_a: mpmath.mpf  # multiplies |a~ - b~|^2
    eta: float
    d_alpha: float
    d_a: float

    def bound(self, t, g0_sq) -> float:
        """Right-hand side at time t for an initial squared error g0_sq."""
        return float(math.exp(-self.eta * t / 8) * g0_sq
                     + self.d_alpha ** 2 * self.coef_alpha + self.d_a ** 2 * self.coef_a)


def _check_range(name, v, lo, hi):
    if not lo < v < hi:
        raise ValueError(f"{name}={v} is outside ({lo}, {hi})")


def eval_thm31_constants(p: PhysicalParams, q: AssimParams, cfg: BoundsConfig, M) -> Thm31:
    _check_range("alpha", p.alpha, 1, 3)
    _check_range("beta", q.beta, 1, 3)
    if not q.eta > 0:
        raise ValueError("eta must be > 0")
    with mpmath.workdps(_DPS):
        lad = eval_M_ladder(p, cfg, M)
        nu, l, al, a = _mp(p.nu), _mp(p.l), _mp(p.alpha), _mp(p.a)
        at, eta, F = _mp(p.a_tilde), _mp(q.eta), _mp(cfg.f_norm)
        C6, C42 = _mp(cfg.C6), _mp(cfg.C42_5)
        M1, M2 = lad["M1"], lad["M2"]
        _, _, s2 = _scales(nu, a, al)
        mx = _mp(max(p.alpha, q.beta))
        A0 = l ** 2 * (eta * l ** 2 + 2 * nu) / (eta ** 2 * nu ** 7) * (M2 + M1 / l ** 2) ** 5
        A1 = (l ** 8 / nu ** 10 * (1 / nu + 2 / (eta * l ** 2))
              * (M2 ** 7 / nu + 4 / (eta * s2) * M2 ** 7 + 8 / (eta * nu ** 2) * F ** 2 * M2 ** 6
                 + 2 / (eta * l ** 16) * M1 ** 7))
        if p.alpha < 2 and q.beta < 2:
            branch = "A0"
            ca = (32 * at ** 2 * nu ** 2 / (eta * l ** 4) * M1
                  + 64 * at ** 2 * C6 ** 12 / (2 - mx) ** 2 * A0)
            cb = 2 * nu ** 2 / (eta * l ** 4) * M1 + 2 * C6 ** 10 * A0
        else:
            branch = "A1"
            ca = (2 ** 9 * at ** 2 * nu ** 2 / (eta ** 2 * l ** 4) * M1
                  + 2 ** 22 * at ** 2 * C6 ** 2 * C42 ** 14 / (3 - mx) ** 2 * A1)
            cb = 2 ** 5 * nu ** 2 / (eta ** 2 * l ** 4) * M1 + 2 ** 16 * C42 ** 14 * A1
        return Thm31(branch, A0, A1, ca, cb, q.eta, abs(p.alpha - q.beta),
                     abs(p.a_tilde - q.b_tilde))


# -- H1 synchronization constants --------------------------------------------

def eval_thm32_33_constants(p: PhysicalParams, q: AssimParams, cfg: BoundsConfig, M):
    """Q, Z2..Z6 coefficients, B (with log B), C, D, Ctilde, Dtilde, H, Ztilde1."""
    _check_range("alpha", p.alpha, 1, 2)
    _check_range("beta", q.beta, 1, 2)
    _need(cfg, "kappa")
    if not q.eta > 0:
        raise ValueError("eta must be > 0")
    with mpmath.workdps(_DPS):
        lad = eval_M_ladder(p, cfg, M)
        nu, l, al, a = _mp(p.nu), _mp(p.l), _mp(p.alpha), _mp(p.a)
        be, b = _mp(q.beta), _mp(q.b(p))
        at, eta, F = _mp(p.a_tilde), _mp(q.eta), _mp(cfg.f_norm)
        C3, C6, C10, C6b, Ci = (_mp(cfg.C3), _mp(cfg.C6), _mp(cfg.C10), _mp(cfg.C6beta),
                                _mp(cfg.Cinf))
        kap = _mp(cfg.kappa)
        M1, M2, M3, M8, Mv = lad["M1"], lad["M2"], lad["M3"], lad["M8"], lad["M"]
        _, _, s2 = _scales(nu, a, al)
        mx = _mp(max(p.alpha, q.beta))
        e = mpmath.e
        da2, dab2 = _mp(p.alpha - q.beta) ** 2, _mp(p.a_tilde - q.b_tilde) ** 2

        Q = 4 / nu * M2 + 16 / (eta * s2) * M2 + 32 / (eta * nu ** 2) * F ** 2
        g = kap ** 2 * C6 ** 2 * C6b ** (4 * be)
        Z2c = 2 ** 12 * g * l / nu
        Z3 = (64 * at ** 2 / e ** 2 * nu / l ** 4 * M1
              + 2 ** 15 * at ** 2 * (C6 ** 12 + C10 ** 10) / (2 - mx) ** 2 * l ** 2 / nu ** 7
              * (M2 + M1 / l ** 2) ** 5)
        Z4c = 2 ** 14 * at ** 2 * C10 ** 10 / (2 - mx) ** 2 * l ** 4 / nu ** 7 * M2 ** 4
        Z5 = (6 * nu / l ** 4 * M1
              + 2 ** 12 * (C6 ** 10 + C10 ** 10) * l ** 2 / nu ** 7 * (M2 + M1 / l ** 2) ** 5)
        Z6c = 2 ** 11 * C10 ** 10 * l ** 4 / nu ** 7 * M2 ** 4
        logB = 2 ** 13 * g * l / nu ** 2 * M2
        B = mpmath.exp(logB)
        C = 2 * B * (8 / eta * Z3 + Z4c * Q)
        D = 2 * B * (8 / eta * Z5 + Z6c * Q)
        Ct = 2 * B / eta * (8 * Z3 + Z4c * M8 ** 2)
        Dt = 2 * B / eta * (8 * Z5 + Z6c * M8 ** 2)
        H = M2 + M1 / l ** 2 + B * (4 * Mv + 2 * da2 * (8 / eta * Z3 + Z4c * Q)
                                     + 2 * dab2 * (8 / eta * Z5 + Z6c * Q))
        r = (1 + be) / (2 - be)
        Zt1 = (432 * Ci ** 4 / nu ** 3 * M2 ** 2
               + 4 * Ci ** 2 / nu * M2
               + 8 * C6 ** 2 * C3 ** 2 / (nu * l) * 4 * H
               + 12 ** 3 * C6 ** 4 * C3 ** 4 / nu ** 3 * 16 * H ** 2
               + 2 ** (4 * be + 11) * g * b ** 2 / (nu * l ** (6 * be - 2))
               * (M1 ** (2 * be) + (l ** 2 * 4 * H) ** (2 * be))
               + 2 ** ((24 - 9 * be) / (2 - be)) * g * b ** (2 / (2 - be))
               / (l ** ((be - 1) / (2 - be)) * nu) * (M2 ** r + (4 * H) ** r)
               + 2 ** ((7 * be + 7) / (2 - be)) * kap ** (2 / (2 - be)) * C6 ** (2 / (2 - be))
               * C6b ** (4 * be / (2 - be)) * b ** (2 / (2 - be)) / nu ** (be / (2 - be))
               * H ** ((be - 1) / (2 - be)) * (M2 ** r + (4 * H) ** r)
               + nu / (2 * l ** 2))
        return {"Q": Q, "Z2_coef": Z2c, "Z3": Z3, "Z4_coef": Z4c, "Z5": Z5, "Z6_coef": Z6c,
                "logB": logB, "B": B, "C": C, "D": D, "Ctilde": Ct, "Dtilde": Dt, "H": H,
                "Ztilde1": Zt1}


def z_time_dependent(p: PhysicalParams, q: AssimParams, cfg: BoundsConfig, M, rec):
    """Z1(t), Z2(t), Z4(t), Z6(t) along a coupled record."""
    consts = eval_thm32_33_constants(p, q, cfg, M)
    lad = eval_M_ladder(p, cfg, M)
    nu, l, be, b = p.nu, p.l, q.beta, q.b(p)
    C3, C6, C6b, Ci, kap = cfg.C3, cfg.C6, cfg.C6beta, cfg.Cinf, cfg.kappa
    M1, M2 = float(lad["M1"]), float(lad["M2"])
    g = kap ** 2 * C6 ** 2 * C6b ** (4 * be)
    w1 = rec["w_grad"] ** 2 + rec["w_l2"] ** 2 / l ** 2
    gh1 = rec["g_h1"]
    wg = rec["w_grad"]
    r = (1 + be) / (2 - be)
    e = (2 + 2 * be) / (2 - be)
    Z1 = (432 * Ci ** 4 / nu ** 3 * M2 ** 2 + 4 * Ci ** 2 / (l * nu) * M2
          + 8 * C6 ** 2 * C3 ** 2 / (nu * l) * w1
          + 12 ** 3 * C6 ** 4 * C3 ** 4 / nu ** 3 * w1 ** 2
          + 2 ** (4 * be + 11) * g * b ** 2 / (nu * l ** (6 * be - 2))
          * (M1 ** (2 * be) + rec["w_l2"] ** (4 * be))
          + 2 ** ((24 - 9 * be) / (2 - be)) * g * b ** (2 / (2 - be))
          / (l ** ((be - 1) / (2 - be)) * nu) * (M2 ** r + wg ** e)
          + 2 ** ((7 * be + 7) / (2 - be)) * kap ** (2 / (2 - be)) * C6 ** (2 / (2 - be))
          * C6b ** (4 * be / (2 - be)) * b ** (2 / (2 - be)) / nu ** (be / (2 - be))
          * gh1 ** ((be - 1) / (2 - be)) * (M2 ** r + wg ** e)
          + nu / (2 * l ** 2))
    A2 = rec["u_A"] ** 2
    return {"Z1": Z1, "Z2": float(consts["Z2_coef"]) * A2,
            "Z4": float(consts["Z4_coef"]) * A2, "Z6": float(consts["Z6_coef"]) * A2}


# -- hypotheses ---------------------------------------------------------------

@dataclass
class Inequality:
    name: str
    lhs: mpmath.mpf
    rhs: mpmath.mpf

    @property
    def holds(self):
        return bool(self.lhs > self.rhs)


def check_hypotheses(p: PhysicalParams, q: AssimParams, cfg: BoundsConfig, M,
                     consts: Optional[dict] = None):
    """Both inequalities of each hypothesis, written as lhs > rhs, with
    per-result verdicts."""
    spec = q.interpolant
    if spec is None:
        c0, c1, h = 0.0, 0.0, 0.0
    else:
        c0, c1, h = spec.c0, spec.c1, spec.h
    with mpmath.workdps(_DPS):
        nu, l, be, b, eta = _mp(p.nu), _mp(p.l), _mp(q.beta), _mp(q.b(p)), _mp(q.eta)
        c0, c1, h = _mp(c0), _mp(c1), _mp(h)
        ineq = [
            Inequality("12ee2.eta", eta, 8 * (be - 1) / (be * b ** (1 / (be - 1))
                                                         * nu ** (be / (be - 1)))),
            Inequality("12ee2.h", nu, 4 * eta * c0 * h ** 2),
        ]
        out = {"inequalities": ineq}
        range31 = 1 < p.alpha < 3 and 1 < q.beta < 3
        h12 = all(i.holds for i in ineq)
        out["thm31"] = bool(range31 and float(c1) == 0 and h12)
        if 1 < p.alpha < 2 and 1 < q.beta < 2 and cfg.kappa is not None:
            if consts is None:
                consts = eval_thm32_33_constants(p, q, cfg, M)
            lad = eval_M_ladder(p, cfg, M)
            g = _mp(cfg.kappa) ** 2 * _mp(cfg.C6) ** 2 * _mp(cfg.C6beta) ** (4 * be)
            ineq2 = [
                Inequality("45drht.eta", eta, 32 * eta ** 2 * c0 * h ** 2 / nu
                           + 4 * consts["Ztilde1"] + 2 ** 14 * g * l / nu * lad["M3"]),
                Inequality("45drht.h", nu ** 2, 32 * c1 / 7 * h ** 4 * eta
                           * (nu + 8 * eta * l ** 2) / l ** 2),
            ]
            ineq.extend(ineq2)
            ok = h12 and all(i.holds for i in ineq2)
            out["thm32"] = bool(ok)
            out["thm33"] = bool(ok)
        else:
            out["thm32"] = None
            out["thm33"] = None
        return out


# -- report -------------------------------------------------------------------

def _fmt(x):
    if x is None:
        return "unavailable"
    with mpmath.workdps(_DPS):
        return mpmath.nstr(mpmath.mpf(x), 17, min_fixed=0, max_fixed=0)


def _log10(x):
    if x is None:
        return "unavailable"
    with mpmath.workdps(_DPS):
        x = mpmath.mpf(x)
        if x <= 0:
            return "-inf" if x == 0 else "nan"
        return mpmath.nstr(mpmath.log10(x), 17)


@dataclass
class Verdict:
    name: str
    bound: float
    measured: float
    ratio: float  # max over samples of measured / bound
    status: str  # HOLDS, FAILS, VACUOUS, UNAVAILABLE
    window: str = ""

    @property
    def margin(self):
        return 1.0 - self.ratio if math.isfinite(self.ratio) else math.nan


@dataclass
class BoundsReport:
    params: dict
    config: BoundsConfig
    constants: Dict[str, Optional[mpmath.mpf]]
    hypotheses: dict = field(default_factory=dict)
    verdicts: List[Verdict] = field(default_factory=list)
    flags: tuple = SUSPECTED_TYPOS
    diagnostics: dict = field(default_factory=dict)

    def value(self, name) -> float:
        v = self.constants.get(name)
        if v is None:
            return math.nan
        try:
            return float(v)
        except OverflowError:
            return math.inf

    def log10(self, name) -> float:
        v = self.constants.get(name)
        if v is None:
            return math.nan
        with mpmath.workdps(_DPS):
            return float(mpmath.log10(v)) if v > 0 else -math.inf

    def verdict(self, name) -> Verdict:
        for v in self.verdicts:
            if v.name == name:
                return v
        raise KeyError(name)

    @property
    def all_hold(self):
        return all(v.status in ("HOLDS", "VACUOUS", "UNAVAILABLE") for v in self.verdicts)

    def to_kv(self, path=None) -> str:
        lines = [f"# {k} = {v}" for k, v in sorted(self.params.items())]
        lines += [f"# bounds.{k} = {v!r}" for k, v in asdict(self.config).items()]
        for name in CONSTANT_ORDER:
            if name in self.constants:
                v = self.constants[name]
                lines.append(f"{name} = {_fmt(v)}")
                lines.append(f"{name}.log10 = {_log10(v)}")
        for ineq in self.hypotheses.get("inequalities", []):
            lines.append(f"{ineq.name}.lhs = {_fmt(ineq.lhs)}")
            lines.append(f"{ineq.name}.rhs = {_fmt(ineq.rhs)}")
            lines.append(f"{ineq.name}.holds = {ineq.holds}")
        for k in ("thm31", "thm32", "thm33"):
            if k in self.hypotheses:
                v = self.hypotheses[k]
                lines.append(f"hypotheses.{k} = {'unavailable' if v is None else v}")
        for v in self.verdicts:
            lines.append(f"verdict.{v.name} = {v.status} ratio={v.ratio!r} "
                         f"bound={v.bound!r} measured={v.measured!r}")
        for k, v in sorted(self.diagnostics.items()):
            lines.append(f"diagnostic.{k} = {v}")
        for key, text in self.flags:
            lines.append(f"flag.{key} = {text}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "value", "log10", "available"])
        for name in CONSTANT_ORDER:
            if name in self.constants:
                v = self.constants[name]
                w.writerow([name, _fmt(v), _log10(v), v is not None])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def verdicts_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimate", "status", "ratio", "bound", "measured", "window"])
        for v in self.verdicts:
            w.writerow([v.name, v.status, repr(v.ratio), repr(v.bound), repr(v.measured),
                        v.window])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def evaluate(p: PhysicalParams, q: Optional[AssimParams], cfg: BoundsConfig, M) -> BoundsReport:
    """Evaluate every constant available for the parameter ranges given."""
    consts = dict(eval_M_ladder(p, cfg, M))
    params = {"physical.nu": p.nu, "physical.l": p.l, "physical.alpha": p.alpha,
              "physical.a_tilde": p.a_tilde, "physical.a": p.a, "M": float(M)}
    with mpmath.workdps(_DPS):
        consts["F"] = _mp(cfg.f_norm)
        consts["Ft"] = _mp(cfg.ft_norm)
        if cfg.kappa is not None:
            consts["kappa"] = _mp(cfg.kappa)
    hyp = {}
    if q is not None:
        params.update({"assim.beta": q.beta, "assim.b_tilde": q.b_tilde, "assim.eta": q.eta})
        if q.interpolant is not None:
            params.update({"interp.kind": q.interpolant.kind, "interp.h": q.interpolant.h,
                           "interp.c0": q.interpolant.c0, "interp.c1": q.interpolant.c1})
        if q.eta > 0:
            with mpmath.workdps(_DPS):
                consts["Q"] = weighted_dissipation_bound(p, cfg, M, q.eta)
            if 1 < p.alpha < 3 and 1 < q.beta < 3:
                t31 = eval_thm31_constants(p, q, cfg, M)
                consts.update(A0=t31.A0, A1=t31.A1, thm31_coef_alpha=t31.coef_alpha,
                              thm31_coef_a=t31.coef_a)
                params["thm31.branch"] = t31.branch
            t32 = None
            if 1 < p.alpha < 2 and 1 < q.beta < 2 and cfg.kappa is not None:
                t32 = eval_thm32_33_constants(p, q, cfg, M)
                consts.update(t32)
            hyp = check_hypotheses(p, q, cfg, M, t32)
    return BoundsReport(params, cfg, consts, hyp)


# -- empirical verification ---------------------------------------------------

def _cumtrapz(t, y):
    out = np.zeros_like(t)
    out[1:] = np.cumsum(0.5 * np.diff(t) * (y[1:] + y[:-1]))
    return out


def exp_weighted_integral(t, y, lam):
    """Running ``int_0^t exp(-lam (t - s)) y(s) ds`` for piecewise-linear y."""
    from .assimilation import weighted_step
    out = np.zeros_like(t, dtype=float)
    for i in range(1, t.size):
        out[i] = weighted_step(out[i - 1], y[i - 1], y[i], t[i] - t[i - 1], lam)
    return out


def _pairs_ratio(t, integral, base, rate):
    """max over r < t of (I(t) - I(r)) / (base(r) + rate (t - r))."""
    dI = integral[None, :] - integral[:, None]
    dt = t[None, :] - t[:, None]
    bound = base[:, None] + rate * dt
    mask = dt > 0
    if not mask.any():
        return math.nan, math.nan, math.nan
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, dI / bound, -np.inf)
    i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
    return float(ratio[i, j]), float(bound[i, j]), float(dI[i, j])


def _windowed(t, integral, width):
    """Integrals over [s, s + width] for sample times s with s + width inside the record."""
    ok = t + width <= t[-1] * (1 + 1e-12)
    s = t[ok]
    vals = np.interp(s + width, t, integral) - integral[ok]
    return s, vals


def _verdict(name, measured, bound, window=""):
    measured = np.atleast_1d(np.asarray(measured, float))
    bound = np.broadcast_to(np.asarray(bound, float), measured.shape)
    if measured.size == 0:
        return Verdict(name, math.nan, math.nan, math.nan, "VACUOUS", window)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(bound > 0, measured / bound, np.where(measured > 0, np.inf, 0.0))
    k = int(np.argmax(ratio))
    r = float(ratio[k])
    return Verdict(name, float(bound[k]), float(measured[k]), r,
                   "HOLDS" if r <= 1.0 else "FAILS", window)


REQUIRED_COLUMNS = ("t", "u_l2", "u_grad", "u_lp", "u_A")


def verify_apriori(rec, report: BoundsReport, p: PhysicalParams, eta: Optional[float] = None):
    """Check every implemented a-priori estimate, including the late-time
    ones that need 1 < alpha < 2, against a truth trajectory whose first
    row is t = 0.

    Time integrals use the per-step running integrals when the record has
    them and trapezoid quadrature of the samples otherwise.
    """
    missing = [c for c in REQUIRED_COLUMNS if c not in rec.columns]
    if missing:
        raise ValueError(f"record is missing columns needed for verification: {missing}")
    if len(rec) == 0:
        raise ValueError("empty record")
    cfg = report.config
    t = rec["t"] - rec["t"][0]
    nu, l, al, a = p.nu, p.l, p.alpha, p.a
    F = float(cfg.f_norm)
    u2 = rec["u_l2"] ** 2
    g2 = rec["u_grad"] ** 2
    A2 = rec["u_A"] ** 2
    lp = rec["u_lp"] ** (2 * al + 2)
    M = float(report.constants["M"])
    M0 = g2[0] + u2[0] / l ** 2
    if M0 > M * (1 + 1e-12):
        raise ValueError(f"M={M} is below ||grad u0||^2 + ||u0||^2/l^2 = {M0}")
    c = {k: report.value(k) for k in report.constants}
    K = c["K"]
    s0 = nu ** (al / (al - 1)) * a ** (1 / (al - 1))
    s1 = nu ** ((2 * al - 1) / (al - 1)) * a ** (1 / (al - 1))
    s2 = nu ** ((3 * al - 2) / (al - 1)) * a ** (1 / (al - 1))
    T1 = l ** 2 / nu
    int_lp = rec["int_lp"] if "int_lp" in rec.columns else _cumtrapz(t, lp)
    int_A = rec["int_A"] if "int_A" in rec.columns else _cumtrapz(t, A2)
    int_g = rec["int_grad"] if "int_grad" in rec.columns else _cumtrapz(t, g2)
    out = []

    out.append(_verdict("jhgtn01", u2, np.exp(-2 * nu * t / l ** 2) * u2[0] + l ** 2 / nu * K,
                        "t >= 0"))
    rate = c["M4"]
    r, b, m = _pairs_ratio(t, int_lp, u2 / a, rate)
    out.append(Verdict("jhgtn0111", b, m, r, "HOLDS" if r <= 1 else "FAILS", "t >= r >= 0"))
    late = t >= T1
    b03 = ((1 / (2 * l ** 2) + 1 / (2 * s1)) * np.exp(-2 * nu * (t - T1) / l ** 2) * u2[0]
           + K * (3 / (2 * nu) + 3 * l ** 2 / (2 * s2)) + l ** 2 / nu ** 2 * F ** 2)
    out.append(_verdict("jhgtn03", g2[late], b03[late], "t >= l^2/nu"))
    early = t <= T1
    b032 = (g2[0] + (l ** 4 / nu ** 3 * F ** 2
                     + 4 * l ** ((3 * al - 2) / al) / (nu ** ((al - 1) / al) * a ** (1 / al))) / s0
            + l ** 2 / nu ** 2 * F ** 2)
    out.append(_verdict("jhgtn03.2", g2[early], b032, "0 <= t <= l^2/nu"))
    s, win = _windowed(t, int_g, T1)
    out.append(_verdict("jhgtn02", win, 1 / (2 * nu) * np.exp(-2 * nu * s / l ** 2) * u2[0]
                        + 3 * l ** 2 / (2 * nu ** 2) * K, "window l^2/nu, t >= 0"))
    # jhgtn04 over all pairs r < t
    dA = int_A[None, :] - int_A[:, None]
    dG = int_g[None, :] - int_g[:, None]
    dt = t[None, :] - t[:, None]
    mask = dt > 0
    if mask.any():
        bound = 2 / nu * g2[:, None] + 2 / s1 * dG + 4 * dt / nu ** 2 * F ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mask, dA / bound, -np.inf)
        i, j = np.unravel_index(np.argmax(ratio), ratio.shape)
        rr = float(ratio[i, j])
        out.append(Verdict("jhgtn04", float(bound[i, j]), float(dA[i, j]), rr,
                           "HOLDS" if rr <= 1 else "FAILS", "t >= r >= 0"))
    else:
        out.append(Verdict("jhgtn04", math.nan, math.nan, math.nan, "VACUOUS", "t >= r >= 0"))

    out.append(_verdict("M1", u2, c["M1"], "t >= 0"))
    out.append(_verdict("M2", g2, c["M2"], "t >= 0"))
    r, b, m = _pairs_ratio(t, int_A, np.full_like(t, 2 / nu * c["M2"]), c["M3"])
    out.append(Verdict("M3_integral", b, m, r, "HOLDS" if r <= 1 else "FAILS", "t >= r >= 0"))
    r, b, m = _pairs_ratio(t, int_lp, np.full_like(t, c["M1"] / a), c["M4"])
    out.append(Verdict("M4_integral", b, m, r, "HOLDS" if r <= 1 else "FAILS", "t >= r >= 0"))

    eta_eff = eta if eta is not None else report.params.get("assim.eta")
    if eta_eff and eta_eff > 0:
        Q = float(weighted_dissipation_bound(p, cfg, M, eta_eff))
        rec_eta = rec.meta.get("run.eta") if hasattr(rec, "meta") else None
        if "weighted_int_A" in rec.columns and rec_eta is not None \
                and float(rec_eta) == float(eta_eff):
            weighted = rec["weighted_int_A"]
        else:
            weighted = exp_weighted_integral(t, A2, eta_eff / 8)
        out.append(_verdict("weighted_A", weighted, Q, "t >= 0"))
    else:
        out.append(Verdict("weighted_A", math.nan, math.nan, math.nan, "UNAVAILABLE", "needs eta > 0"))

    if c.get("M5") is not None and math.isfinite(c.get("M5", math.nan)):
        out.append(_verdict("jhgtn02.AAZZ", lp[late], c["M5"], "t >= l^2/nu"))
        if "u_t_l2" in rec.columns:
            ut2 = rec["u_t_l2"] ** 2
            int_ut = _cumtrapz(t, ut2)
            s, win = _windowed(t, int_ut, T1)
            keep = s >= T1
            out.append(_verdict("jhgtn02.AAZZ11", win[keep], c["M6"], "t >= l^2/nu"))
            out.append(_verdict("jhgtn02.AAZZ.2", ut2[t >= 2 * T1], c["M7"], "t >= 2 l^2/nu"))
        else:
            for n in ("jhgtn02.AAZZ11", "jhgtn02.AAZZ.2"):
                out.append(Verdict(n, math.nan, math.nan, math.nan, "UNAVAILABLE",
                                   "record lacks u_t_l2"))
        out.append(_verdict("jhgtn02.AAZZ.3", rec["u_A"][t >= 2 * T1], c["M8"], "t >= 2 l^2/nu"))
    else:
        for n in ("jhgtn02.AAZZ", "jhgtn02.AAZZ11", "jhgtn02.AAZZ.2", "jhgtn02.AAZZ.3"):
            out.append(Verdict(n, math.nan, math.nan, math.nan, "UNAVAILABLE",
                               "requires 1 < alpha < 2"))
    report.verdicts = out
    if "g_h1" in rec.columns and "H" in report.constants:
        H = report.value("H")
        exits = np.nonzero(rec["g_h1"] > H)[0]
        report.diagnostics["T_star"] = repr(float(t[exits[0]])) if exits.size else "inf"
    return out
