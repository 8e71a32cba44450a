"""The parareal iteration with pluggable coarse and fine propagators.

A propagator maps (t, dT, u) to an approximation of the solution at t + dT.
Fine sweeps over coarse intervals are independent, so they may run on a
thread pool; the cost ledger models ideal one-interval-per-processor
execution by taking the maximum fine time across intervals.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .stability import RationalFn, classical_stability
from .tableau import (
    ButcherTableau,
    LinearEvolution,
    StepFailure,
    get_tableau,
    linear_irk_step,
    nonlinear_irk_step,
    rational_coarse_apply,
    semi_implicit_coarse_step,
)

ZERO_FLOOR = 1e-15  # zero errors are shown at this level on log axes


class PararealError(RuntimeError):
    """A propagator failed; carries the iteration and interval where it happened."""

    def __init__(self, msg: str, iteration: int | None = None, interval: int | None = None):
        super().__init__(msg)
        self.iteration = iteration
        self.interval = interval


def _steps(total: float, dt: float) -> int:
    n = round(total / dt)
    if n < 1 or abs(n * dt - total) > 1e-10 * max(1.0, total):
        raise ValueError(f"interval {total} is not a whole number of steps {dt}")
    return n


class TableauPropagator:
    """Repeated steps of an implicit Runge-Kutta scheme with step ``dt``.

    Nonlinear problems use simplified Newton by default (see
    :func:`ocpara.tableau.nonlinear_irk_step`); both variants stop on the same
    residual tolerance.
    """

    def __init__(self, tab: ButcherTableau | str, dt: float, newton_tol: float = 1e-11, newton: str = "simplified"):
        self.tab = get_tableau(tab) if isinstance(tab, str) else tab
        self.dt = float(dt)
        self.newton_tol = newton_tol
        self.newton = newton
        self.name = self.tab.name

    def __call__(self, prob, t: float, dT: float, u):
        dt = self.dt
        if isinstance(prob, LinearEvolution):
            for i in range(_steps(dT, dt)):
                u = linear_irk_step(prob, self.tab, t + i * dt, dt, u)
        else:
            for _ in range(_steps(dT, dt)):
                u = nonlinear_irk_step(prob, self.tab, dt, u, tol=self.newton_tol, newton=self.newton)
        return u


class RationalPropagator:
    """u <- R(d A) u + d sum_i P_i(d A) g_i with d = dT/substeps.

    For linear problems g_i = f(t + C_i d); for semilinear problems the single
    weight multiplies f(u), which gives a linearly implicit scheme.
    """

    def __init__(self, R: RationalFn, weights, nodes=None, substeps: int = 1, name: str = "rational"):
        self.R = R
        self.weights = list(weights)
        self.nodes = np.ones(len(self.weights)) if nodes is None else np.asarray(nodes, float)
        if len(self.nodes) != len(self.weights):
            raise ValueError("need one node per forcing weight")
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        self.substeps = int(substeps)
        self.name = name

    def __call__(self, prob, t: float, dT: float, u):
        d = dT / self.substeps
        for i in range(self.substeps):
            ti = t + i * d
            if isinstance(prob, LinearEvolution):
                g = [prob.f(ti + c * d) for c in self.nodes]
                u = rational_coarse_apply(prob, self.R, self.weights, d, u, g)
            else:
                if len(self.weights) != 1:
                    raise ValueError("semilinear coarse steps use exactly one forcing weight")
                u = semi_implicit_coarse_step(prob, self.R, self.weights[0], d, u)
        return u


def backward_euler(substeps: int = 1) -> RationalPropagator:
    be = classical_stability("be")
    return RationalPropagator(be, [be], substeps=substeps, name="BE")


@dataclass(frozen=True)
class PararealConfig:
    T: float
    dt: float
    J: int
    K_max: int = 50
    eta: float = 1e-12
    coarse_substeps: int = 1
    reference_free: bool = False
    workers: int = 1
    keep_iterates: bool = False

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("T and dt must be positive")
        _steps(self.T, self.dT)

    @property
    def dT(self) -> float:
        return self.J * self.dt

    @property
    def N_c(self) -> int:
        return _steps(self.T, self.dT)


@dataclass
class CostLedger:
    init_coarse_seconds: float = 0.0
    coarse_seconds: list = field(default_factory=list)
    fine_seconds: list = field(default_factory=list)  # one array over intervals per iteration

    def max_fine(self) -> list:
        return [float(np.max(f)) for f in self.fine_seconds]

    def parallel_cost(self, upto: int | None = None, include_coarse: bool = True) -> float:
        """Modelled wall time of the first ``upto`` iterations."""
        k = len(self.fine_seconds) if upto is None else upto
        fine = sum(self.max_fine()[:k])
        if not include_coarse:
            return fine
        return self.init_coarse_seconds + sum(self.coarse_seconds[:k]) + fine


@dataclass
class PararealRun:
    U: list  # U[k] has shape (N_c + 1, size); only the last one unless keep_iterates
    reference: np.ndarray | None
    errors: list
    increments: list
    ledger: CostLedger
    sequential_fine_seconds: float
    cfg: PararealConfig
    converged_at: int | None

    @property
    def iterations(self) -> int:
        return len(self.errors) - 1

    def plot_errors(self) -> np.ndarray:
        e = np.asarray(self.errors, float)
        return np.where(e == 0.0, ZERO_FLOOR, e)


def fine_reference(prob, fine, cfg: PararealConfig):
    """Sequential fine solution at the coarse nodes, and its wall time."""
    dT = cfg.dT
    out = np.empty((cfg.N_c + 1, len(prob.u0)))
    out[0] = prob.u0
    t0 = time.perf_counter()
    for n in range(cfg.N_c):
        out[n + 1] = fine(prob, n * dT, dT, out[n])
    return out, time.perf_counter() - t0


def _timed(fun, *args):
    t0 = time.perf_counter()
    v = fun(*args)
    return v, time.perf_counter() - t0


def run_parareal(
    problem, coarse, fine, cfg: PararealConfig, norm=None, reference=None, sequential_seconds=math.nan
) -> PararealRun:
    """Parareal for ``problem`` (a ProblemInstance or a bare evolution).

    Stops once the error against the fine reference is at most ``eta`` (or, in
    reference-free mode, once successive iterates differ by at most ``eta``).
    A precomputed ``reference`` (from :func:`fine_reference`) can be passed in
    together with its ``sequential_seconds``.
    """
    prob = getattr(problem, "evolution", problem)
    if norm is None:
        norm = getattr(problem, "norm", None) or (lambda v: float(np.linalg.norm(v)))
    N, dT = cfg.N_c, cfg.dT
    T_n = [n * dT for n in range(N + 1)]

    seq_seconds = sequential_seconds
    if reference is None and not cfg.reference_free:
        try:
            reference, seq_seconds = fine_reference(prob, fine, cfg)
        except StepFailure as exc:
            raise PararealError(f"fine reference failed: {exc}") from exc

    def err(U):
        if reference is None:
            return math.nan
        return max(norm(U[n] - reference[n]) for n in range(1, N + 1))

    ledger = CostLedger()
    U = np.empty((N + 1, len(prob.u0)))
    U[0] = prob.u0
    G = np.empty_like(U)
    t0 = time.perf_counter()
    try:
        for n in range(N):
            G[n + 1] = coarse(prob, T_n[n], dT, U[n])
            U[n + 1] = G[n + 1]
    except StepFailure as exc:
        raise PararealError(f"coarse sweep failed: {exc}", 0, n) from exc
    ledger.init_coarse_seconds = time.perf_counter() - t0

    history = [U.copy()]
    errors = [err(U)]
    increments: list = []
    converged = 0 if (not cfg.reference_free and errors[0] <= cfg.eta) else None
    pool = ThreadPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        k = 0
        while converged is None and k < cfg.K_max:
            def fine_task(n, U=U):
                try:
                    return _timed(fine, prob, T_n[n], dT, U[n])
                except StepFailure as exc:
                    raise PararealError(f"fine step failed: {exc}", k, n) from exc

            tasks = pool.map(fine_task, range(N)) if pool else map(fine_task, range(N))
            results = list(tasks)
            Fv = np.stack([r[0] for r in results])
            ledger.fine_seconds.append(np.array([r[1] for r in results]))

            t0 = time.perf_counter()
            U_new = np.empty_like(U)
            G_new = np.empty_like(G)
            U_new[0] = prob.u0
            try:
                for n in range(N):
                    G_new[n + 1] = coarse(prob, T_n[n], dT, U_new[n])
                    U_new[n + 1] = G_new[n + 1] + Fv[n] - G[n + 1]
            except StepFailure as exc:
                raise PararealError(f"coarse sweep failed: {exc}", k + 1, n) from exc
            ledger.coarse_seconds.append(time.perf_counter() - t0)

            increments.append(max(norm(U_new[n] - U[n]) for n in range(1, N + 1)))
            U, G = U_new, G_new
            k += 1
            if cfg.keep_iterates:
                history.append(U.copy())
            else:
                history = [U]
            errors.append(err(U))
            if cfg.reference_free:
                if increments[-1] <= cfg.eta:
                    converged = k
            elif errors[-1] <= cfg.eta:
                converged = k
    finally:
        if pool:
            pool.shutdown()
    return PararealRun(history, reference, errors, increments, ledger, seq_seconds, cfg, converged)


def observed_rate(errors, lo: float = 1e-12, hi: float = 1e-1) -> float:
    """Geometric-mean contraction factor over the decay window [lo, hi].

    Uses the longest run of consecutive iterations with errors in the window.
    """
    e = np.asarray(getattr(errors, "errors", errors), float)
    inside = (e >= lo) & (e <= hi)
    best, start = (0, 0), None
    for i, flag in enumerate(np.append(inside, False)):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    a, b = best
    if b - a < 3:
        raise ValueError("need at least three errors inside the decay window")
    return float((e[b - 1] / e[a]) ** (1.0 / (b - 1 - a)))


def speedup_and_efficiency(run: PararealRun, sequential_fine_seconds: float | None = None, include_coarse: bool = True):
    """(speed-up, efficiency) of the iterations needed to reach eta."""
    if run.converged_at is None:
        raise ValueError("target accuracy was not reached")
    if run.converged_at == 0:
        raise ValueError("no parareal iterations were needed; speed-up is undefined")
    seq = run.sequential_fine_seconds if sequential_fine_seconds is None else sequential_fine_seconds
    para = run.ledger.parallel_cost(run.converged_at, include_coarse)
    s = seq / para
    return s, s / run.cfg.N_c
