"""Real rational functions p(lam)/q(lam) and classical stability functions.

All stability functions use the convention r(lam) ~ exp(-lam), i.e. one step
of the scheme applied to u' = -lam*u multiplies the state by r(dt*lam).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as P

INF = math.inf

# relative size below which trailing polynomial coefficients are dropped
_TRIM_TOL = 1e-13


class DomainError(ValueError):
    """Denominator vanishes at the evaluation point."""


def _trim(c: np.ndarray, tol: float = _TRIM_TOL) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    scale = max(np.max(np.abs(c)), 1.0) if c.size else 1.0
    k = c.size
    while k > 1 and abs(c[k - 1]) <= tol * scale:
        k -= 1
    return c[:k].copy()


@dataclass(frozen=True, eq=False)
class RationalFn:
    """Rational function with ascending-power coefficient vectors.

    The denominator is normalized so that ``den[0] == 1``.
    """

    num: np.ndarray
    den: np.ndarray

    def __init__(self, num, den=(1.0,), normalize: bool = True, trim: bool = False):
        num = np.atleast_1d(np.asarray(num, dtype=float))
        den = np.atleast_1d(np.asarray(den, dtype=float))
        if trim:
            num, den = _trim(num), _trim(den)
        if normalize:
            if den[0] == 0.0:
                raise DomainError("denominator has zero constant term")
            num, den = num / den[0], den / den[0]
        num.setflags(write=False)
        den.setflags(write=False)
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    @property
    def deg_num(self) -> int:
        return len(self.num) - 1

    @property
    def deg_den(self) -> int:
        return len(self.den) - 1

    def __call__(self, lam):
        return evaluate(self, lam)

    def __repr__(self) -> str:
        return f"RationalFn(num={self.num.tolist()}, den={self.den.tolist()})"

    def allclose(self, other: "RationalFn", rtol=1e-12, atol=1e-12) -> bool:
        a, b = _trim(self.num), _trim(other.num)
        c, d = _trim(self.den), _trim(other.den)
        return (
            a.shape == b.shape
            and c.shape == d.shape
            and np.allclose(a, b, rtol=rtol, atol=atol)
            and np.allclose(c, d, rtol=rtol, atol=atol)
        )

    def to_dict(self) -> dict:
        return {"num": self.num.tolist(), "den": self.den.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RationalFn":
        return cls(d["num"], d["den"])

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "RationalFn":
        return cls.from_dict(json.loads(s))

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "RationalFn":
        return cls.loads(Path(path).read_text())


def limit_at_infinity(f: RationalFn) -> float:
    num, den = _trim(f.num, 0.0), _trim(f.den, 0.0)
    if len(num) < len(den):
        return 0.0
    if len(num) == len(den):
        return float(num[-1] / den[-1])
    return math.copysign(INF, num[-1] / den[-1])


def evaluate(f: RationalFn, lam):
    """Evaluate ``f`` at scalar or array ``lam``; ``math.inf`` gives the limit."""
    if np.isscalar(lam):
        if math.isinf(lam):
            return limit_at_infinity(f)
        q = P.polyval(lam, f.den)
        if q == 0.0:
            raise DomainError(f"denominator vanishes at lam={lam}")
        return float(P.polyval(lam, f.num) / q)
    lam = np.asarray(lam, dtype=float)
    out = np.empty_like(lam)
    inf = np.isinf(lam)
    if inf.any():
        out[inf] = limit_at_infinity(f)
    fin = ~inf
    q = P.polyval(lam[fin], f.den)
    if np.any(q == 0.0):
        raise DomainError("denominator vanishes on the evaluation set")
    out[fin] = P.polyval(lam[fin], f.num) / q
    return out


def eval_stable(f: RationalFn, lam):
    """Round-off safe evaluation for a quadratic denominator.

    Splits off the constant limit a2/e2 so that the remaining numerator is
    only linear in ``lam``.
    """
    if f.deg_den != 2:
        raise ValueError("eval_stable requires a quadratic denominator")
    num = np.zeros(3)
    num[: len(f.num)] = f.num
    if len(f.num) > 3:
        raise ValueError("numerator degree exceeds denominator degree")
    a0, a1, a2 = num
    _, e1, e2 = f.den
    lam = np.asarray(lam, dtype=float)
    q = 1.0 + e1 * lam + e2 * lam * lam
    val = a2 / e2 + ((a0 * e2 - a2) + (a1 * e2 - a2 * e1) * lam) / (q * e2)
    return float(val) if val.ndim == 0 else val


def derivative(f: RationalFn) -> RationalFn:
    """Quotient-rule derivative, with denominator q(lam)**2."""
    dnum = P.polysub(P.polymul(P.polyder(f.num), f.den), P.polymul(f.num, P.polyder(f.den)))
    return RationalFn(dnum, P.polymul(f.den, f.den), normalize=False)


def positive_real_roots(c, imag_tol: float = 1e-10) -> np.ndarray:
    """Strictly positive real roots of the polynomial with ascending coefficients ``c``."""
    c = _trim(np.asarray(c, dtype=float), 0.0)
    deg = len(c) - 1
    if deg < 1:
        return np.empty(0)
    if deg == 1:
        roots = np.array([-c[0] / c[1]])
    elif deg == 2:
        a, b, cc = c[2], c[1], c[0]
        disc = b * b - 4 * a * cc
        if disc < 0:
            if -disc > (imag_tol * 2 * abs(a)) ** 2 * (1 + abs(b / (2 * a))) ** 2:
                return np.empty(0)
            disc = 0.0
        sq = math.sqrt(disc)
        # cancellation-free quadratic roots
        t = -0.5 * (b + math.copysign(sq, b)) if b != 0 else -0.5 * sq
        if t == 0.0:
            roots = np.array([0.0, 0.0])
        else:
            roots = np.array([t / a, cc / t])
    else:
        z = P.polyroots(c)
        keep = np.abs(z.imag) < imag_tol * (1 + np.abs(z.real))
        roots = z.real[keep]
    return np.sort(roots[roots > 0])


def critical_points(f: RationalFn) -> np.ndarray:
    """All positive critical points of ``f`` (the zeros of the derivative numerator)."""
    return positive_real_roots(derivative(f).num)


def pade_exp_neg(k: int, j: int) -> RationalFn:
    """(k, j) Pade approximant of exp(-lam): numerator degree k, denominator degree j."""
    fk, fj, fkj = math.factorial(k), math.factorial(j), math.factorial(k + j)
    num = [
        math.factorial(k + j - i) * fk / (fkj * math.factorial(i) * math.factorial(k - i)) * (-1) ** i
        for i in range(k + 1)
    ]
    den = [
        math.factorial(k + j - i) * fj / (fkj * math.factorial(i) * math.factorial(j - i))
        for i in range(j + 1)
    ]
    return RationalFn(num, den)


SDIRK22_GAMMA = (2.0 - math.sqrt(2.0)) / 2.0


def theta_stability(theta: float) -> RationalFn:
    return RationalFn([1.0, theta - 1.0], [1.0, theta])


def sdirk22_stability(gamma: float = SDIRK22_GAMMA) -> RationalFn:
    return RationalFn([1.0, 2 * gamma - 1.0], [1.0, 2 * gamma, gamma * gamma])


SCHEME_ORDERS = {
    "BE": 1,
    "SDIRK22": 2,
    "LobattoIIIC2": 2,
    "LobattoIIIC3": 4,
    "LobattoIIIC4": 6,
    "RadauIIA3": 5,
}

# command-line spellings
SCHEME_ALIASES = {
    "be": "BE",
    "sdirk22": "SDIRK22",
    "lobatto2": "LobattoIIIC2",
    "lobatto3": "LobattoIIIC3",
    "lobatto4": "LobattoIIIC4",
    "radau3": "RadauIIA3",
}


@dataclass(frozen=True)
class IntegratorSpec:
    name: str
    order: int
    stability: RationalFn
    theta: float | None = None


def parse_scheme(name: str) -> tuple[str, float | None]:
    """Normalize a scheme name; ``theta:<v>`` / ``Theta(v)`` carry a value."""
    key = name.strip()
    low = key.lower()
    if low.startswith("theta"):
        rest = key[5:].strip(":() ")
        if not rest:
            raise ValueError(f"theta scheme needs a value: {name!r}")
        return "Theta", float(rest)
    if key in SCHEME_ORDERS:
        return key, None
    if low in SCHEME_ALIASES:
        return SCHEME_ALIASES[low], None
    raise ValueError(f"unknown scheme {name!r}")


def classical_stability(name: str) -> RationalFn:
    """Stability function of a named one-step scheme."""
    key, theta = parse_scheme(name)
    if key == "Theta":
        return theta_stability(theta)
    if key == "BE":
        return RationalFn([1.0], [1.0, 1.0])
    # imported lazily: tableau builds on this module
    from .tableau import get_tableau, stability_from_tableau

    return stability_from_tableau(get_tableau(key))


def integrator_spec(name: str) -> IntegratorSpec:
    key, theta = parse_scheme(name)
    if key == "Theta":
        order = 2 if theta == 0.5 else 1
        return IntegratorSpec("Theta", order, theta_stability(theta), theta)
    return IntegratorSpec(key, SCHEME_ORDERS[key], classical_stability(key))
