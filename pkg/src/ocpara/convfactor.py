"""Convergence factors of the parareal iteration for a coarse/fine stability pair.

The componentwise factor at a scaled eigenvalue s = dT*lam is

    kappa(r, R, J, s) = (r(s/J)^J - R(s)) / (1 - |R(s)|)
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .stability import RationalFn, derivative, evaluate

S_LO, S_HI = 1e-6, 1e8
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InstabilityError(ValueError):
    """The coarse stability function has |R(s)| >= 1 at a sample."""

    def __init__(self, s):
        super().__init__(f"|R(s)| >= 1 at s={s}")
        self.s = s


class AssumptionViolated(ValueError):
    """r(s) <= 0 somewhere, so the sensitivity kernel's logarithm is undefined."""


@dataclass(frozen=True)
class SpectrumSpec:
    """Scaled spectrum samples dT*lam for lam on [lam_min, lam_max]."""

    lam_min: float
    lam_max: float
    n_samples: int = 2048
    dT: float = 1.0
    spacing: str = "log"
    include_inf: bool = False

    def __post_init__(self):
        if not (0 < self.lam_min <= self.lam_max):
            raise ValueError("need 0 < lam_min <= lam_max")
        if self.n_samples < 2 and self.lam_min != self.lam_max:
            raise ValueError("need at least two samples")
        if self.spacing not in ("log", "linear"):
            raise ValueError("spacing must be 'log' or 'linear'")

    @property
    def samples(self) -> np.ndarray:
        if self.lam_min == self.lam_max:
            lam = np.array([self.lam_min])
        elif self.spacing == "log":
            lam = np.geomspace(self.lam_min, self.lam_max, self.n_samples)
        else:
            lam = np.linspace(self.lam_min, self.lam_max, self.n_samples)
        s = self.dT * lam
        return np.append(s, math.inf) if self.include_inf else s

    def to_dict(self) -> dict:
        return {
            "lam_min": self.lam_min,
            "lam_max": self.lam_max,
            "n_samples": self.n_samples,
            "dT": self.dT,
            "spacing": self.spacing,
            "include_inf": self.include_inf,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectrumSpec":
        return cls(**d)


@dataclass(frozen=True)
class AnalysisResult:
    phi_star: float
    s_star: float
    J: int


def fine_power(r: RationalFn, s, J):
    """r(s/J)^J, via exp(J log r) where r > 0 so that large J cannot under/overflow."""
    scalar = np.isscalar(s)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    rv = np.atleast_1d(evaluate(r, s / J))
    out = np.empty_like(rv)
    pos = rv > 0
    with np.errstate(divide="ignore"):
        out[pos] = np.exp(J * np.log(rv[pos]))
    neg = ~pos
    if neg.any():
        if float(J) != int(J):
            raise ValueError("non-integer J with a non-positive fine stability value")
        out[neg] = np.power(rv[neg], int(J))
    return float(out[0]) if scalar else out


def kappa(r: RationalFn, R: RationalFn, J, s):
    """Signed componentwise convergence factor; raises if the coarse step is unstable at s."""
    scalar = np.isscalar(s)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    Rv = np.atleast_1d(evaluate(R, s))
    bad = np.abs(Rv) >= 1.0
    if bad.any():
        raise InstabilityError(float(s[np.argmax(bad)]))
    val = (fine_power(r, s, J) - Rv) / (1.0 - np.abs(Rv))
    return float(val[0]) if scalar else val


def kappa_c(r: RationalFn, R: RationalFn, J, spec: SpectrumSpec) -> float:
    """Largest |kappa| over the sampled scaled spectrum."""
    return float(np.max(np.abs(kappa(r, R, J, spec.samples))))


def scan_grid(s_lo: float = S_LO, s_hi: float = S_HI, n: int = 8192) -> np.ndarray:
    return np.geomspace(s_lo, s_hi, n)


def _golden_max(fun, lo: float, hi: float, iters: int = 80):
    """Maximize ``fun`` over log-uniform coordinates in [lo, hi]."""
    a, b = math.log(lo), math.log(hi)
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(math.exp(c)), fun(math.exp(d))
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(math.exp(d))
        if b - a < 1e-13:
            break
    x = math.exp(0.5 * (a + b))
    return x, fun(x)


def _refined_max(fun_vec, s_lo, s_hi, n_grid):
    s = scan_grid(s_lo, s_hi, n_grid)
    vals = fun_vec(s)
    i = int(np.argmax(vals))  # first occurrence: ties go to the smaller s
    lo, hi = s[max(i - 1, 0)], s[min(i + 1, len(s) - 1)]
    x, fx = _golden_max(lambda t: float(fun_vec(np.array([t]))[0]), lo, hi)
    if fx < vals[i]:
        x, fx = float(s[i]), float(vals[i])
    return x, fx


def phi_star(r: RationalFn, R: RationalFn, J, s_lo: float = S_LO, s_hi: float = S_HI, n_grid: int = 8192):
    """Global maximum of |kappa(r, R, J, .)| on [s_lo, s_hi] plus the limit at infinity."""
    if s_lo <= 0:
        raise ValueError("s_lo must be positive")
    if n_grid < 2048:
        raise ValueError("scan grid needs at least 2048 points")
    x, fx = _refined_max(lambda s: np.abs(kappa(r, R, J, s)), s_lo, s_hi, n_grid)
    f_inf = abs(kappa(r, R, J, math.inf))
    if f_inf > fx:
        return AnalysisResult(float(f_inf), math.inf, J)
    return AnalysisResult(float(fx), float(x), J)


def kappa_curve(r: RationalFn, R: RationalFn, J, s=None):
    s = scan_grid(1e-3, 1e3, 2001) if s is None else np.asarray(s, float)
    return s, np.abs(kappa(r, R, J, s))


def h_function(r: RationalFn, R: RationalFn, s, J0: int = 16):
    """d/dJ of kappa(r, R, J, J0*s) at J = J0:

    r(s)^(J0-1) / (1 - |R(J0 s)|) * (r(s) ln r(s) - r'(s) s)
    """
    scalar = np.isscalar(s)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    rv = np.atleast_1d(evaluate(r, s))
    if np.any(rv <= 0):
        raise AssumptionViolated(f"r(s) <= 0 at s={float(s[np.argmax(rv <= 0)])}")
    Rv = np.abs(np.atleast_1d(evaluate(R, J0 * s)))
    if np.any(Rv >= 1):
        raise InstabilityError(float(J0 * s[np.argmax(Rv >= 1)]))
    dr = np.atleast_1d(evaluate(derivative(r), s))
    with np.errstate(under="ignore"):
        val = np.exp((J0 - 1) * np.log(rv)) / (1.0 - Rv) * (rv * np.log(rv) - dr * s)
    return float(val[0]) if scalar else val


def check_positive(r: RationalFn, s_lo: float = S_LO, s_hi: float = S_HI, n: int = 20001) -> bool:
    """Grid check of r(s) > 0 on (0, inf), including the limit value."""
    vals = evaluate(r, scan_grid(s_lo, s_hi, n))
    return bool(np.all(vals > 0) and evaluate(r, math.inf) >= 0)


def sup_abs_h(r: RationalFn, R: RationalFn, J0: int = 16, s_lo: float = 1e-6, s_hi: float = 1e4, n_grid: int = 20001):
    """(sup |h|, maximizer); raises AssumptionViolated when r changes sign."""
    if not check_positive(r):
        raise AssumptionViolated("fine stability function is not positive on (0, inf)")
    return _refined_max(lambda s: np.abs(h_function(r, R, s, J0)), s_lo, s_hi, n_grid)


def k_of_J(r: RationalFn, R: RationalFn, J) -> float:
    return phi_star(r, R, J).phi_star


def j_robustness(r: RationalFn, R: RationalFn, J_set=range(16, 129)) -> float:
    """max over J in J_set of the global convergence factor."""
    return max(k_of_J(r, R, J) for J in J_set)
