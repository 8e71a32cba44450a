"""Butcher tableaux and the time steppers built on them.

Evolution equations are always written as ``u' = -A_h u + f``, with ``A_h``
symmetric positive (semi-)definite.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import polynomial as P

from .stability import SDIRK22_GAMMA, RationalFn


class StepFailure(RuntimeError):
    """A time step could not be completed (singular system or Newton stall)."""

    def __init__(self, msg: str, residual: float | None = None):
        super().__init__(msg)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class ButcherTableau:
    name: str
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    @property
    def stages(self) -> int:
        return len(self.b)

    @property
    def stiffly_accurate(self) -> bool:
        return bool(np.allclose(self.A[-1], self.b, rtol=0, atol=1e-15))


def _tab(name, A, b, c, order):
    return ButcherTableau(name, np.array(A, float), np.array(b, float), np.array(c, float), order)


@lru_cache(maxsize=None)
def get_tableau(name: str) -> ButcherTableau:
    """Tableau by canonical name (``BE``, ``SDIRK22``, ``LobattoIIIC2..4``, ``RadauIIA3``)."""
    from .stability import parse_scheme

    key, theta = parse_scheme(name)
    s5, s6 = math.sqrt(5.0), math.sqrt(6.0)
    if key == "BE":
        return _tab("BE", [[1.0]], [1.0], [1.0], 1)
    if key == "Theta":
        # theta-method as a 2-stage tableau (explicit first stage)
        return _tab(
            f"Theta({theta})", [[0.0, 0.0], [1 - theta, theta]], [1 - theta, theta], [0.0, 1.0],
            2 if theta == 0.5 else 1,
        )
    if key == "SDIRK22":
        g = SDIRK22_GAMMA
        return _tab("SDIRK22", [[g, 0.0], [1 - g, g]], [1 - g, g], [g, 1.0], 2)
    if key == "LobattoIIIC2":
        return _tab("LobattoIIIC2", [[0.5, -0.5], [0.5, 0.5]], [0.5, 0.5], [0.0, 1.0], 2)
    if key == "LobattoIIIC3":
        return _tab(
            "LobattoIIIC3",
            [[1 / 6, -1 / 3, 1 / 6], [1 / 6, 5 / 12, -1 / 12], [1 / 6, 2 / 3, 1 / 6]],
            [1 / 6, 2 / 3, 1 / 6],
            [0.0, 0.5, 1.0],
            4,
        )
    if key == "LobattoIIIC4":
        return _tab(
            "LobattoIIIC4",
            [
                [1 / 12, -s5 / 12, s5 / 12, -1 / 12],
                [1 / 12, 1 / 4, (10 - 7 * s5) / 60, s5 / 60],
                [1 / 12, (10 + 7 * s5) / 60, 1 / 4, -s5 / 60],
                [1 / 12, 5 / 12, 5 / 12, 1 / 12],
            ],
            [1 / 12, 5 / 12, 5 / 12, 1 / 12],
            [0.0, (5 - s5) / 10, (5 + s5) / 10, 1.0],
            6,
        )
    if key == "RadauIIA3":
        return _tab(
            "RadauIIA3",
            [
                [(88 - 7 * s6) / 360, (296 - 169 * s6) / 1800, (-2 + 3 * s6) / 225],
                [(296 + 169 * s6) / 1800, (88 + 7 * s6) / 360, (-2 - 3 * s6) / 225],
                [(16 - s6) / 36, (16 + s6) / 36, 1 / 9],
            ],
            [(16 - s6) / 36, (16 + s6) / 36, 1 / 9],
            [(4 - s6) / 10, (4 + s6) / 10, 1.0],
            5,
        )
    raise ValueError(f"no tableau for {name!r}")


# ---------------------------------------------------------------- order conditions


@lru_cache(maxsize=None)
def rooted_trees(order: int) -> tuple:
    """All rooted trees with ``order`` nodes, as sorted tuples of child subtrees."""
    if order == 1:
        return ((),)
    out = set()

    def partitions(remaining, max_part):
        if remaining == 0:
            yield []
            return
        for k in range(min(remaining, max_part), 0, -1):
            for rest in partitions(remaining - k, k):
                yield [k] + rest

    def combos(parts):
        if not parts:
            yield ()
            return
        head, tail = parts[0], parts[1:]
        for t in rooted_trees(head):
            for rest in combos(tail):
                yield (t,) + rest

    for parts in partitions(order - 1, order - 1):
        for children in combos(parts):
            out.add(tuple(sorted(children)))
    return tuple(sorted(out))


def _tree_order(t) -> int:
    return 1 + sum(_tree_order(ch) for ch in t)


def _gamma(t) -> int:
    g = _tree_order(t)
    for ch in t:
        g *= _gamma(ch)
    return g


def order_condition_defects(tab: ButcherTableau, order: int) -> np.ndarray:
    """|b . Phi(t) - 1/gamma(t)| over every rooted tree with at most ``order`` nodes."""
    A, b = tab.A, tab.b

    def phi(t):
        v = np.ones(len(b))
        for ch in t:
            v = v * (A @ phi(ch))
        return v

    out = []
    for k in range(1, order + 1):
        for t in rooted_trees(k):
            out.append(abs(b @ phi(t) - 1.0 / _gamma(t)))
    return np.array(out)


def stability_from_tableau(tab: ButcherTableau) -> RationalFn:
    """r(lam) = det(I + lam(A - 1 b^T)) / det(I + lam A), trailing zeros trimmed."""
    m = tab.stages
    num = np.real(np.poly(-(tab.A - np.outer(np.ones(m), tab.b))))
    den = np.real(np.poly(-tab.A))
    return RationalFn(num, den, trim=True)


# ---------------------------------------------------------------- evolutions


Forcing = Callable[[float], np.ndarray]


@dataclass(eq=False)
class LinearEvolution:
    """u' = -A_h u + forcing(t), u(0) = u0."""

    A_h: sp.csr_matrix
    u0: np.ndarray
    forcing: Forcing | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def size(self) -> int:
        return self.A_h.shape[0]

    def f(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.size)
        return self.forcing(t)

    def cached(self, key, build):
        hit = self._cache.get(key)
        if hit is None:
            with self._lock:
                hit = self._cache.get(key)
                if hit is None:
                    hit = build()
                    self._cache[key] = hit
        return hit


@dataclass(eq=False)
class SemilinearEvolution:
    """u' = -A_h u + f(u), with ``jac(u)`` the sparse Jacobian of f.

    ``jac_bands(u)``, when given, returns the (lower, diag, upper) bands of a
    tridiagonal Jacobian directly and enables the banded Newton solver.
    """

    A_h: sp.csr_matrix
    u0: np.ndarray
    nonlinearity: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], sp.spmatrix]
    jac_bands: Callable | None = None
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    size = LinearEvolution.size
    cached = LinearEvolution.cached

    def f(self, u: np.ndarray) -> np.ndarray:
        return self.nonlinearity(u)


# ---------------------------------------------------------------- linear steps


def _factorize(M):
    try:
        return spla.splu(sp.csc_matrix(M))
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise StepFailure(f"singular system: {exc}") from exc


def _stage_matrix(tab: ButcherTableau, A_h, dt: float):
    n = A_h.shape[0]
    return sp.identity(tab.stages * n, format="csc") + dt * sp.kron(tab.A, A_h, format="csc")


def linear_irk_step(prob: LinearEvolution, tab: ButcherTableau, t_n: float, dt: float, u):
    """One implicit Runge-Kutta step for u' = -A_h u + f(t)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A_h, m, n = prob.A_h, tab.stages, prob.size
    lu = prob.cached(("irk", tab.name, dt), lambda: _factorize(_stage_matrix(tab, A_h, dt)))
    Au = A_h @ u
    rhs = np.empty(m * n)
    for i in range(m):
        rhs[i * n:(i + 1) * n] = prob.f(t_n + tab.c[i] * dt) - Au
    k = lu.solve(rhs).reshape(m, n)
    if not np.all(np.isfinite(k)):
        raise StepFailure("stage solve produced non-finite values")
    return u + dt * (tab.b @ k)


# ---------------------------------------------------------------- nonlinear steps


def _binv(tab: ButcherTableau):
    try:
        return np.linalg.solve(tab.A.T, tab.b)
    except np.linalg.LinAlgError:
        return None


class _BandedNewton:
    """Newton matrices for tridiagonal A_h and f' in node-major order.

    Ordering unknowns as (node, stage) makes I + dt A (x) (A_h - f') a band
    matrix with 2m-1 sub- and super-diagonals, solved directly by LAPACK.
    """

    OFFSETS = (-1, 0, 1)

    def __init__(self, tab: ButcherTableau, dt: float, A_h):
        m, n = tab.stages, A_h.shape[0]
        self.m, self.n, self.dt = m, n, dt
        self.w = w = 2 * m - 1
        N = m * n
        self.perm = (np.arange(m)[None, :] * n + np.arange(n)[:, None]).ravel()
        Ad = [_diagonal(A_h, d) for d in self.OFFSETS]
        ab = np.zeros((2 * w + 1, N))
        ab[w, :] = 1.0
        # flat positions in ab of the entries of stage block (j, jp) on node offset d
        self.slots = {}
        for k, d in enumerate(self.OFFSETS):
            i = np.arange(max(0, -d), n - max(0, d))
            for jp in range(m):
                cols = (i + d) * m + jp
                flat, coef = [], []
                for j in range(m):
                    a = tab.A[j, jp]
                    if a == 0.0:
                        continue
                    rows = i * m + j
                    pos = (w + rows - cols) * N + cols
                    ab.flat[pos] += dt * a * Ad[k]
                    flat.append(pos)
                    coef.append(dt * a)
                if flat:
                    self.slots[(k, jp)] = (np.stack(flat), np.array(coef)[:, None])
        self.ab0 = ab

    @classmethod
    def maybe(cls, prob, tab, dt):
        def build():
            return cls(tab, dt, prob.A_h) if _bandwidth(prob.A_h) <= 1 else False

        return prob.cached(("banded", tab.name, dt), build) or None

    def solve(self, bands, res):
        """``bands[jp]`` = (lower, diag, upper) of f' at stage jp."""
        from scipy.linalg import LinAlgError, solve_banded

        ab = self.ab0.copy()
        flat_ab = ab.reshape(-1)
        for (k, jp), (pos, coef) in self.slots.items():
            vals = bands[jp][k]
            if vals is None:
                continue
            flat_ab[pos] -= coef * vals
        try:
            x = solve_banded((self.w, self.w), ab, res[self.perm], check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise StepFailure(f"singular Newton system: {exc}") from exc
        out = np.empty(self.m * self.n)
        out[self.perm] = x
        return out


class _DecoupledNewton:
    """Simplified-Newton solves with one frozen f' shared by all stages.

    With A = V diag(mu) V^-1 the stage system I + dt A (x) K splits into the
    independent tridiagonal systems I + dt mu_j K, K = A_h - f'.
    """

    def __init__(self, tab: ButcherTableau, dt: float, A_h):
        mu, V = np.linalg.eig(tab.A)
        self.mu, self.V, self.Vinv = mu, V, np.linalg.inv(V)
        self.dt = dt
        self.Ad = [_diagonal(A_h, d) for d in _BandedNewton.OFFSETS]

    @classmethod
    def maybe(cls, prob, tab, dt):
        def build():
            if _bandwidth(prob.A_h) > 1:
                return False
            # a defective A (repeated SDIRK diagonal) has no usable eigenbasis
            if np.linalg.cond(np.linalg.eig(tab.A)[1]) > 1e8:
                return False
            return cls(tab, dt, prob.A_h)

        return prob.cached(("decoupled", tab.name, dt), build) or None

    def factor(self, bands):
        from scipy.linalg import lapack

        K = [a if b is None else a - b for a, b in zip(self.Ad, bands)]
        out = []
        for mu in self.mu:
            c = self.dt * mu
            dl, d, du = c * K[0], 1.0 + c * K[1], c * K[2]
            dl, d, du, du2, ipiv, info = lapack.zgttrf(dl, d, du)
            if info != 0:
                raise StepFailure("singular simplified-Newton system")
            out.append((dl, d, du, du2, ipiv))
        return out

    def solve(self, factors, res):
        from scipy.linalg import lapack

        m = len(self.mu)
        r = self.Vinv @ res.reshape(m, -1)
        y = np.empty_like(r)
        for j, (dl, d, du, du2, ipiv) in enumerate(factors):
            y[j], info = lapack.zgttrs(dl, d, du, du2, ipiv, r[j])
        return (self.V @ y).real.ravel()


def _frozen_solver(prob, tab, dt, u, base, kronA):
    """Solver for the stage Jacobian with f' evaluated once at ``u``."""
    dec = _DecoupledNewton.maybe(prob, tab, dt)
    bands = _jac_bands(prob, u) if dec is not None else None
    if bands is not None:
        factors = dec.factor(bands)
        return lambda r: dec.solve(factors, r)
    J = prob.jac(u)
    jac = base - dt * (kronA @ sp.block_diag([J] * tab.stages, format="csr"))
    lu = _factorize(jac)
    return lu.solve


def _jac_bands(prob, u):
    """(lower, diag, upper) of f'(u), or None when f' is not tridiagonal.

    A band given as None is identically zero.
    """
    bands = getattr(prob, "jac_bands", None)
    if bands is not None:
        return bands(u)
    J = prob.jac(u)
    if _bandwidth(J) > 1:
        return None
    return tuple(_diagonal(J, d) for d in _BandedNewton.OFFSETS)


def _diagonal(M, d: int) -> np.ndarray:
    """Entries M[i, i + d] for the rows i where they exist."""
    return np.asarray(sp.csr_matrix(M).diagonal(d), float)


def _bandwidth(M) -> int:
    M = sp.coo_matrix(M)
    if M.nnz == 0:
        return 0
    return int(np.max(np.abs(M.col - M.row)))


def nonlinear_irk_step(
    prob: SemilinearEvolution,
    tab: ButcherTableau,
    dt: float,
    u,
    tol: float = 1e-11,
    max_newton: int = 20,
    history: list | None = None,
    newton: str = "exact",
):
    """One implicit RK step for u' = -A_h u + f(u), stage values solved by Newton.

    ``newton="exact"`` rebuilds the full stage Jacobian every iteration;
    ``"simplified"`` freezes f' at ``u`` for all stages and reuses one
    factorization, trading quadratic for fast linear convergence.
    ``history`` (if given) receives the residual infinity norm before every
    Newton update and after the last one.
    """
    if newton not in ("exact", "simplified"):
        raise ValueError("newton must be 'exact' or 'simplified'")
    A_h, m, n = prob.A_h, tab.stages, prob.size
    base = prob.cached(("nl-base", tab.name, dt), lambda: _stage_matrix(tab, A_h, dt).tocsr())
    kronA = prob.cached(("kronA", tab.name, dt), lambda: sp.kron(tab.A, sp.identity(n), format="csr"))
    U = np.tile(u, m)

    rhs0 = np.tile(u, m)

    def residual(U):
        Us = U.reshape(m, n)
        F = np.concatenate([prob.f(Us[j]) for j in range(m)])
        return base @ U - rhs0 - dt * (kronA @ F)

    banded = _BandedNewton.maybe(prob, tab, dt) if newton == "exact" else None
    frozen = None
    if newton == "simplified":
        frozen = _frozen_solver(prob, tab, dt, u, base, kronA)
    res = residual(U)
    rnorm = float(np.max(np.abs(res)))
    for it in range(max_newton + 1):
        if history is not None:
            history.append(rnorm)
        if rnorm <= tol:
            break
        if it == max_newton:
            raise StepFailure(
                f"Newton did not reach tol={tol:g} in {max_newton} iterations", residual=rnorm
            )
        Us = U.reshape(m, n)
        delta = frozen(res) if frozen is not None else None
        if delta is None and banded is not None:
            bands = [_jac_bands(prob, Us[j]) for j in range(m)]
            if all(b is not None for b in bands):
                delta = banded.solve(bands, res)
        if delta is None and frozen is None:
            Jf = sp.block_diag([prob.jac(Us[j]) for j in range(m)], format="csr")
            jac = base - dt * (kronA @ Jf)
            try:
                delta = spla.spsolve(sp.csc_matrix(jac), res)
            except RuntimeError as exc:
                raise StepFailure(f"singular Newton system: {exc}", residual=rnorm) from exc
        U = U - delta
        if not np.all(np.isfinite(U)):
            raise StepFailure("Newton iterate became non-finite", residual=rnorm)
        res = residual(U)
        rnorm = float(np.max(np.abs(res)))
    w = prob.cached(("binv", tab.name), lambda: _binv(tab))
    if w is not None:
        # dt*F(U) = A^{-1}(U - u) at the solution; avoids A_h amplifying the residual
        return u + w @ (U.reshape(m, n) - u)
    Us = U.reshape(m, n)
    F = np.stack([-(A_h @ Us[j]) + prob.f(Us[j]) for j in range(m)])
    return u + dt * (tab.b @ F)


# ---------------------------------------------------------------- rational operators


def _poly_matrix(c, X):
    n = X.shape[0]
    out = sp.csc_matrix((n, n))
    power = sp.identity(n, format="csc")
    for k, ck in enumerate(c):
        if k:
            power = power @ X
        if ck != 0.0:
            out = out + ck * power
    return out.tocsc()


def _poly_apply(c, X, v):
    """p(X) v by Horner's rule."""
    if len(c) == 0:
        return np.zeros_like(v)
    out = c[-1] * v
    for ck in c[-2::-1]:
        out = X @ out + ck * v
    return out


def _split_poles(den, sep: float = 1e-6):
    """Poles of 1/den grouped as (real poles, one of each conjugate pair), or None if repeated."""
    z = P.polyroots(np.asarray(den, float))
    scale = 1.0 + np.abs(z)
    for i in range(len(z)):
        for j in range(i + 1, len(z)):
            if abs(z[i] - z[j]) < sep * max(scale[i], scale[j]):
                return None
    real = [float(x.real) for x in z if abs(x.imag) <= 1e-12 * (1 + abs(x))]
    cplx = [complex(x) for x in z if x.imag > 1e-12 * (1 + abs(x))]
    return real, cplx


class RationalOperator:
    """Applies f(X) for a rational f (numerator degree <= denominator degree) and sparse X.

    With simple poles z_j, f(X) = k I + sum_j c_j (X - z_j I)^{-1}, so each
    application is one shifted solve per real pole or conjugate pair. The
    shifted factors are far better conditioned than the expanded denominator
    polynomial. Repeated poles fall back to quotient(X) + Q(X)^{-1} rem(X).
    """

    def __init__(self, f: RationalFn, X):
        self.X = sp.csr_matrix(X)
        self.f = f
        num, den = np.asarray(f.num, float), np.asarray(f.den, float)
        if len(num) > len(den):
            raise ValueError("numerator degree exceeds denominator degree")
        self.den = den
        self.poles = _split_poles(den) if len(den) > 1 else ([], [])
        n = self.X.shape[0]
        eye = sp.identity(n, format="csc")
        if self.poles is None:
            quot, rem = P.polydiv(num, den)
            if len(num) < len(den):
                quot, rem = np.zeros(1), num
            self.quot, self.rem = np.atleast_1d(quot), np.atleast_1d(rem)
            self.lu = _factorize(_poly_matrix(den, self.X))
            return
        real, cplx = self.poles
        self.shift_lu = [_factorize(self.X - z * eye) for z in real]
        self.shift_lu += [_factorize((self.X - z * eye).astype(complex)) for z in cplx]
        self.shifts = [complex(z) for z in real] + cplx
        self.n_real = len(real)

    def weights(self, f: RationalFn):
        """(k, residues) of f over this operator's poles; f must share the denominator."""
        num = np.asarray(f.num, float)
        if num.size > self.den.size:
            raise ValueError("numerator degree exceeds denominator degree")
        k = num[-1] / self.den[-1] if num.size == self.den.size else 0.0
        rem = P.polysub(num, k * self.den)
        dq = P.polyder(self.den)
        res = [P.polyval(z, rem) / P.polyval(z, dq) for z in self.shifts]
        return k, res

    def combine(self, terms):
        """sum_t f_t(X) v_t for (f_t, v_t) whose f_t share this denominator."""
        if self.poles is None:
            acc = 0.0
            out = 0.0
            for f, v in terms:
                quot, rem = P.polydiv(np.asarray(f.num, float), self.den)
                if len(f.num) < len(self.den):
                    quot, rem = np.zeros(1), np.asarray(f.num, float)
                out = out + _poly_apply(np.atleast_1d(quot), self.X, v)
                acc = acc + _poly_apply(np.atleast_1d(rem), self.X, v)
            return out + self.lu.solve(acc)
        out = 0.0
        rhs = [0.0] * len(self.shifts)
        for f, v in terms:
            k, res = self.weights(f)
            if k:
                out = out + k * v
            for j, c in enumerate(res):
                rhs[j] = rhs[j] + (c.real if j < self.n_real else c) * v
        for j, lu in enumerate(self.shift_lu):
            if j < self.n_real:
                out = out + lu.solve(np.asarray(rhs[j], float))
            else:
                out = out + 2.0 * lu.solve(np.asarray(rhs[j], complex)).real
        return out

    def apply(self, v, f: RationalFn | None = None):
        return self.combine([(self.f if f is None else f, v)])


def _same_den(a: RationalFn, b: RationalFn) -> bool:
    return a.den.shape == b.den.shape and np.allclose(a.den, b.den, rtol=1e-14, atol=0)


def _operator(prob, f: RationalFn, dT: float) -> RationalOperator:
    key = ("rat", f.den.tobytes(), dT)
    return prob.cached(key, lambda: RationalOperator(f, dT * prob.A_h))


def rational_coarse_apply(prob, R: RationalFn, weights, dT: float, u, forcing_values):
    """R(dT A) u + dT sum_i P_i(dT A) g_i, sharing the shifted solves when denominators agree."""
    op = _operator(prob, R, dT)
    terms = [(R, u)]
    out = 0.0
    for Pi, g in zip(weights, forcing_values):
        if _same_den(Pi, R):
            terms.append((Pi, dT * g))
        else:
            out = out + _operator(prob, Pi, dT).combine([(Pi, dT * g)])
    return op.combine(terms) + out


def semi_implicit_coarse_step(prob: SemilinearEvolution, R: RationalFn, P1: RationalFn, dT: float, u):
    """u' = R(dT A_h) u + dT P1(dT A_h) f(u)."""
    if dT <= 0:
        raise ValueError("dT must be positive")
    return rational_coarse_apply(prob, R, [P1], dT, u, [prob.f(u)])
