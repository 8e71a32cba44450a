"""Optimized coarse propagators: parametric stability functions and their training.

The coarse stability function is

    R(lam) = sum_{i<=n} a_i lam^i / (1 + sum_{i<=m} exp(b_i) lam^i)

with a_0..a_q fixed by matching exp(-lam) to order q, and the remaining
parameters (b_1..b_m, a_{q+1}..a_n) trained to minimize the worst-case
convergence factor under a log-barrier that keeps |R| < 1.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .convfactor import SpectrumSpec, fine_power, phi_star
from .stability import RationalFn, evaluate, positive_real_roots

log = logging.getLogger(__name__)


class InfeasiblePoint(ValueError):
    """|R| >= 1 somewhere on the constraint set (or at infinity)."""


class NoFeasibleInit(RuntimeError):
    pass


def taylor_exp_neg(j: int) -> float:
    return (-1.0) ** j / math.factorial(j)


def consistency_fill(b, q: int) -> np.ndarray:
    """a_k = sum_{j<=k} c_j exp(b_{k-j}) for k = 0..q, with exp(b_0) = 1."""
    b = np.asarray(b, dtype=float)
    if len(b) < q:
        raise ValueError("need at least q denominator parameters")
    eb = np.concatenate([[1.0], np.exp(b)])
    return np.array([sum(taylor_exp_neg(j) * eb[k - j] for j in range(k + 1)) for k in range(q + 1)])


@dataclass(frozen=True)
class OcpParams:
    m: int
    n: int
    q: int
    b: tuple
    a_free: tuple

    def __post_init__(self):
        if not (0 <= self.q < self.n <= self.m):
            raise ValueError(f"need q < n <= m, got m={self.m} n={self.n} q={self.q}")
        if len(self.b) != self.m or len(self.a_free) != self.n - self.q:
            raise ValueError("parameter vector lengths do not match (m, n, q)")
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))
        object.__setattr__(self, "a_free", tuple(float(x) for x in self.a_free))

    @property
    def theta(self) -> np.ndarray:
        return np.array(self.b + self.a_free)

    @classmethod
    def from_theta(cls, theta, m: int, n: int, q: int) -> "OcpParams":
        theta = np.asarray(theta, dtype=float)
        return cls(m, n, q, tuple(theta[:m]), tuple(theta[m:]))

    def numerator(self) -> np.ndarray:
        return np.concatenate([consistency_fill(self.b, self.q), self.a_free])

    def denominator(self) -> np.ndarray:
        return np.concatenate([[1.0], np.exp(self.b)])

    @classmethod
    def from_rational(cls, R: RationalFn, q: int) -> "OcpParams":
        """Inverse of :func:`build_R` (denominator coefficients must be positive)."""
        den = np.asarray(R.den, float)
        if np.any(den[1:] <= 0):
            raise ValueError("log-parametrization needs positive denominator coefficients")
        m, n = len(den) - 1, len(R.num) - 1
        return cls(m, n, q, tuple(np.log(den[1:])), tuple(R.num[q + 1:]))


def build_R(params: OcpParams) -> RationalFn:
    return RationalFn(params.numerator(), params.denominator(), normalize=False)


# ---------------------------------------------------------------- losses


def _samples(spectrum) -> np.ndarray:
    s = spectrum.samples if isinstance(spectrum, SpectrumSpec) else np.atleast_1d(spectrum)
    return np.asarray(s, dtype=float)


def _R_at_infinity(params: OcpParams) -> float:
    return params.a_free[-1] / math.exp(params.b[-1]) if params.n == params.m else 0.0


def barrier_loss(params: OcpParams, spectrum) -> float:
    """Mean of log(1 - R^2) over samples and critical points, plus log(1 - (a_n/e^{b_m})^2)."""
    s = _samples(spectrum)
    s = s[np.isfinite(s)]
    R = build_R(params)
    pts = np.concatenate([s, positive_real_roots(_dR_num(R))])
    vals = evaluate(R, pts)
    tail = params.a_free[-1] / math.exp(params.b[-1])
    if np.any(np.abs(vals) >= 1.0) or abs(tail) >= 1.0:
        raise InfeasiblePoint("barrier argument not positive")
    return float(np.mean(np.log1p(-vals * vals)) + math.log1p(-tail * tail))


def sup_loss(params: OcpParams, r: RationalFn, J0: int, spectrum) -> tuple[float, float]:
    """max over samples of |r(s/J0)^J0 - R(s)| / (1 - |R(s)|) and its argmax (ties -> smaller s)."""
    s = np.sort(_samples(spectrum))
    Rv = evaluate(build_R(params), s)
    if np.any(np.abs(Rv) >= 1.0):
        raise InfeasiblePoint("|R| >= 1 on the sample set")
    g = fine_power(r, s, J0)
    F = np.abs(g - Rv) / (1.0 - np.abs(Rv))
    j = int(np.argmax(F))
    return float(F[j]), float(s[j])


def _dR_num(R: RationalFn) -> np.ndarray:
    from numpy.polynomial import polynomial as P

    return P.polysub(P.polymul(P.polyder(R.num), R.den), P.polymul(R.num, P.polyder(R.den)))


class _Objective:
    """Vectorized loss/subgradient evaluation for a fixed (m, n, q) and sample set."""

    def __init__(self, m, n, q, s_finite, target_finite, target_inf):
        self.m, self.n, self.q = m, n, q
        self.s = s_finite
        self.g = target_finite
        self.g_inf = target_inf
        self.deg = max(m, n)
        self.pows = np.vander(s_finite, self.deg + 1, increasing=True).T
        # d a_k / d b_i = c_{k-i} e^{b_i} for 1 <= i <= k <= q
        self.cmat = np.array(
            [[taylor_exp_neg(k - i) if k >= i else 0.0 for k in range(q + 1)] for i in range(1, m + 1)]
        )

    def coefficients(self, th):
        m, n, q = self.m, self.n, self.q
        b = th[:m]
        eb = np.exp(b)
        ebb = np.concatenate([[1.0], eb])
        a_fix = np.array([sum(taylor_exp_neg(j) * ebb[k - j] for j in range(k + 1)) for k in range(q + 1)])
        return np.concatenate([a_fix, th[m:]]), ebb

    def rational(self, th) -> RationalFn:
        num, den = self.coefficients(th)
        return RationalFn(num, den, normalize=False)

    def values(self, th, pows):
        num, den = self.coefficients(th)
        N = num @ pows[: self.n + 1]
        D = den @ pows[: self.m + 1]
        return N, D

    def feasible(self, th):
        num, den = self.coefficients(th)
        tail = num[-1] / den[-1]
        if abs(tail) >= 1.0:
            return False
        N, D = self.values(th, self.pows)
        if np.any(np.abs(N) >= np.abs(D)):
            return False
        crit = positive_real_roots(_dR_num(RationalFn(num, den, normalize=False)))
        if crit.size:
            R = self.rational(th)
            if np.any(np.abs(evaluate(R, crit)) >= 1.0):
                return False
        return True

    def grad_R(self, th, pows, N, D):
        """dR/dtheta at the columns of ``pows``; shape (len(theta), npts)."""
        m, n, q = self.m, self.n, self.q
        eb = np.exp(th[:m])
        R = N / D
        G = np.empty((len(th), pows.shape[1]))
        dN = (self.cmat * eb[:, None]) @ pows[: q + 1]
        G[:m] = dN / D - R * eb[:, None] * pows[1: m + 1] / D
        G[m:] = pows[q + 1: n + 1] / D
        return G

    def grad_R_inf(self, th):
        G = np.zeros(len(th))
        if self.n == self.m:
            eb = math.exp(th[self.m - 1])
            G[-1] = 1.0 / eb
            G[self.m - 1] = -th[-1] / eb
        return G

    def sup_part(self, th):
        N, D = self.values(th, self.pows)
        R = N / D
        F = np.abs(self.g - R) / (1.0 - np.abs(R))
        j = int(np.argmax(F))
        val, s_arg = F[j], self.s[j]
        R_inf = th[-1] / math.exp(th[self.m - 1]) if self.n == self.m else 0.0
        F_inf = abs(self.g_inf - R_inf) / (1.0 - abs(R_inf))
        if F_inf > val:
            return F_inf, math.inf, R_inf, None
        return val, s_arg, R[j], j

    def loss_and_subgradient(self, th, rho):
        m = self.m
        num, den = self.coefficients(th)
        R_fn = RationalFn(num, den, normalize=False)
        crit = positive_real_roots(_dR_num(R_fn))
        N, D = self.values(th, self.pows)
        R = N / D
        F = np.abs(self.g - R) / (1.0 - np.abs(R))
        j = int(np.argmax(F))
        R_inf = num[-1] / den[-1] if self.n == self.m else 0.0
        F_inf = abs(self.g_inf - R_inf) / (1.0 - abs(R_inf))

        # subgradient of the single active sample
        if F_inf > F[j]:
            Ls, Rj, gj, dRj = F_inf, R_inf, self.g_inf, self.grad_R_inf(th)
        else:
            Ls, Rj, gj = F[j], R[j], self.g[j]
            dRj = self.grad_R(th, self.pows[:, j: j + 1], N[j: j + 1], D[j: j + 1])[:, 0]
        aR = 1.0 - abs(Rj)
        dF = (-np.sign(gj - Rj) * aR + abs(gj - Rj) * np.sign(Rj)) / (aR * aR)
        grad = dF * dRj

        # barrier: samples and critical points; critical points are stationary in s
        if crit.size:
            pc = np.vander(crit, self.deg + 1, increasing=True).T
            Nc, Dc = self.values(th, pc)
            Rall = np.concatenate([R, Nc / Dc])
            Gall = np.concatenate([self.grad_R(th, self.pows, N, D), self.grad_R(th, pc, Nc, Dc)], axis=1)
        else:
            Rall, Gall = R, self.grad_R(th, self.pows, N, D)
        w = 1.0 - Rall * Rall
        tail = num[-1] / den[-1]
        wt = 1.0 - tail * tail
        Lb = float(np.mean(np.log(w)) + math.log(wt))
        gLb = np.mean(-2.0 * Rall / w * Gall, axis=1)
        eb_m = den[-1]
        gLb[-1] += -2.0 * tail / wt / eb_m
        gLb[m - 1] += 2.0 * tail * tail / wt
        return Ls - rho * Lb, grad - rho * gLb, Ls


# ---------------------------------------------------------------- training


INIT_MODES = ("gaussian", "poles")


@dataclass
class TrainConfig:
    J0: int = 16
    m: int = 2
    n: int = 2
    q: int = 1
    spectrum: SpectrumSpec = field(default_factory=lambda: SpectrumSpec(1e-3, 1e5, 2048, 1.0))
    rho0: float = 1.0
    beta: float = 0.9
    inner_iters: int = 50
    max_outer: int = 100
    step0: float = 0.1
    step_decay: float = 50.0
    grad_tol: float = 1e-6
    momentum: float = 0.9
    max_halvings: int = 40
    restarts: int = 12
    init: str = "poles"
    init_scale: float = 1.0
    init_pool: int = 200
    max_init_tries: int = 1000
    seed: int = 0
    gate: float = 0.05
    stop_at_gate: bool = True

    def __post_init__(self):
        if self.rho0 <= 0 or not (0 < self.beta < 1):
            raise ValueError("need rho0 > 0 and 0 < beta < 1")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spectrum"] = self.spectrum.to_dict()
        return d


@dataclass
class TrainResult:
    params: OcpParams
    R: RationalFn
    sup_loss: float
    s_arg: float
    below_gate: bool
    outer_iters: int
    inner_iters: int
    seconds: float
    history: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.below_gate


def _draw(rng, cfg: TrainConfig, mode: str) -> np.ndarray:
    m, n, q = cfg.m, cfg.n, cfg.q
    if mode == "gaussian":
        return np.concatenate([rng.normal(0.0, cfg.init_scale, m), rng.uniform(-0.1, 0.1, n - q)])
    # denominator prod(1 + z_i lam) with rates spread over six decades
    z = 10.0 ** rng.uniform(-3.0, 3.0, m)
    den = np.array([1.0])
    for zi in z:
        den = np.convolve(den, [1.0, zi])
    b = np.log(den[1:])
    scale = np.array([den[k] if k <= m else 1.0 for k in range(q + 1, n + 1)])
    return np.concatenate([b, rng.uniform(-1.0, 1.0, n - q) * scale])


def _random_init(obj: _Objective, rng, cfg: TrainConfig):
    for _ in range(cfg.max_init_tries):
        th = _draw(rng, cfg, cfg.init)
        if obj.feasible(th):
            return th
    raise NoFeasibleInit(f"no feasible initialization in {cfg.max_init_tries} draws")


def _starting_points(obj: _Objective, rng, cfg: TrainConfig) -> list:
    """The ``restarts`` lowest-loss points out of ``init_pool`` feasible draws."""
    n_pool = max(cfg.init_pool, cfg.restarts, 1)
    pool = [_random_init(obj, rng, cfg) for _ in range(n_pool)]
    pool.sort(key=lambda th: obj.sup_part(th)[0])
    return pool[: max(cfg.restarts, 1)]


def _descend(obj: _Objective, th, cfg: TrainConfig):
    """Path-following barrier loop from one starting point; returns (best_theta, best_Ls, stats)."""
    best_th, best_L = th.copy(), obj.sup_part(th)[0]
    rho, it = cfg.rho0, 0
    velocity = np.zeros_like(th)
    history = []
    outer = 0
    for outer in range(1, cfg.max_outer + 1):
        rho *= cfg.beta
        gnorm = math.inf
        for _k in range(cfg.inner_iters):
            _, grad, Ls = obj.loss_and_subgradient(th, rho)
            if Ls < best_L:
                best_th, best_L = th.copy(), Ls
            gnorm = float(np.linalg.norm(grad))
            if gnorm < cfg.grad_tol:
                break
            step = cfg.step0 / (1.0 + it / cfg.step_decay)
            it += 1
            velocity = cfg.momentum * velocity + grad / gnorm
            for _h in range(cfg.max_halvings):
                trial = th - step * velocity
                if obj.feasible(trial):
                    break
                step *= 0.5
            else:
                velocity[:] = 0.0
                break  # stalled at this rho
            th = trial
        Ls = obj.sup_part(th)[0]
        if Ls < best_L:
            best_th, best_L = th.copy(), Ls
        history.append((rho, float(best_L)))
        if gnorm < cfg.grad_tol:
            break
    return best_th, best_L, outer, it, history


def make_objective(r: RationalFn, cfg: TrainConfig) -> _Objective:
    s = np.sort(cfg.spectrum.samples)
    s = s[np.isfinite(s)]
    return _Objective(
        cfg.m, cfg.n, cfg.q, s, fine_power(r, s, cfg.J0), float(fine_power(r, math.inf, cfg.J0))
    )


def train(r: RationalFn, cfg: TrainConfig) -> TrainResult:
    """Barrier path-following subgradient descent from ``cfg.restarts`` random starts."""
    t0 = time.perf_counter()
    obj = make_objective(r, cfg)
    rng = np.random.default_rng(cfg.seed)
    best = None
    total_outer = total_inner = 0
    history = []
    for start, th0 in enumerate(_starting_points(obj, rng, cfg)):
        th, L, outer, inner, hist = _descend(obj, th0, cfg)
        total_outer += outer
        total_inner += inner
        history.append(hist)
        log.info("start %d: sup loss %.5f after %d outer iterations", start, L, outer)
        if best is None or L < best[1]:
            best = (th, L)
        if cfg.stop_at_gate and best[1] <= cfg.gate:
            break
    th, _ = best
    params = OcpParams.from_theta(th, cfg.m, cfg.n, cfg.q)
    R = build_R(params)
    value, s_arg = sup_loss(params, r, cfg.J0, cfg.spectrum)
    return TrainResult(
        params=params,
        R=R,
        sup_loss=value,
        s_arg=s_arg,
        below_gate=value > cfg.gate,
        outer_iters=total_outer,
        inner_iters=total_inner,
        seconds=time.perf_counter() - t0,
        history=history,
    )


def verify_stable(R: RationalFn, samples) -> bool:
    """|R| < 1 on the samples, at the positive critical points and at infinity."""
    s = np.asarray(samples, float)
    pts = np.concatenate([s[np.isfinite(s)], positive_real_roots(_dR_num(R))])
    return bool(np.all(np.abs(evaluate(R, pts)) < 1.0) and abs(evaluate(R, math.inf)) < 1.0)


# ---------------------------------------------------------------- forcing weights


def default_nodes(q: int) -> np.ndarray:
    """C_1 = 1, remaining nodes equispaced below it."""
    return 1.0 - np.arange(q) / q


def solve_forcing_weights(R: RationalFn, q: int, C=None) -> list[RationalFn]:
    """Forcing weights P_1..P_q over R's denominator making the step strictly accurate of order q.

    Solves sum_i C_i^j P_i(lam) = j!/(-lam)^{j+1} (R(lam) - sum_{l<=j} (-lam)^l/l!)
    for j = 0..q-1.
    """
    from numpy.polynomial import polynomial as P

    C = default_nodes(q) if C is None else np.asarray(C, dtype=float)
    if len(C) != q:
        raise ValueError("need exactly q nodes")
    if len(set(np.round(C, 14))) != q:
        raise np.linalg.LinAlgError("duplicate nodes make the Vandermonde system singular")
    num, den = np.asarray(R.num, float), np.asarray(R.den, float)
    width = len(den) - 1
    rhs = np.zeros((q, width))
    for j in range(q):
        taylor = np.array([(-1.0) ** ell / math.factorial(ell) for ell in range(j + 1)])
        Nj = P.polysub(num, P.polymul(taylor, den))
        Nj = np.concatenate([Nj, np.zeros(max(0, j + 1 - len(Nj)))])
        low = Nj[: j + 1]
        if np.max(np.abs(low)) > 1e-10 * max(1.0, np.max(np.abs(Nj))):
            raise ValueError(f"R is not consistent to order {j + 1}; cannot divide by lam^{j + 1}")
        quot = Nj[j + 1:] * math.factorial(j) / (-1.0) ** (j + 1)
        if len(quot) > width:
            if np.max(np.abs(quot[width:])) > 1e-12:
                raise ValueError("weight numerator degree would reach the denominator degree")
            quot = quot[:width]
        rhs[j, : len(quot)] = quot
    V = np.vander(C, q, increasing=True).T  # V[j, i] = C_i^j
    coeffs = np.linalg.solve(V, rhs)
    return [RationalFn(coeffs[i], den, normalize=False) for i in range(q)]


def accuracy_residual(R: RationalFn, weights, C) -> float:
    """Max coefficient of the strict-accuracy identities after clearing denominators."""
    from numpy.polynomial import polynomial as P

    worst = 0.0
    C = np.asarray(C, float)
    for j in range(len(weights)):
        lhs = np.zeros(1)
        for Ci, Pi in zip(C, weights):
            if not np.allclose(Pi.den, R.den):
                raise ValueError("weights must share R's denominator")
            lhs = P.polyadd(lhs, Ci ** j * np.asarray(Pi.num))
        # (-lam)^{j+1} lhs - j! (N - T_j Q) should vanish identically
        taylor = np.array([(-1.0) ** ell / math.factorial(ell) for ell in range(j + 1)])
        shifted = np.concatenate([np.zeros(j + 1), lhs * (-1.0) ** (j + 1)])
        expect = math.factorial(j) * P.polysub(R.num, P.polymul(taylor, R.den))
        worst = max(worst, float(np.max(np.abs(P.polysub(shifted, expect)))))
    return worst


def phi_star_at(R: RationalFn, r: RationalFn, J: int) -> float:
    return phi_star(r, R, J).phi_star
