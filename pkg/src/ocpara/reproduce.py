"""Batch drivers behind ``ocpara reproduce`` and ``ocpara solve``."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import targets
from .artifacts import coarse_spec
from .convfactor import AssumptionViolated, SpectrumSpec, j_robustness, kappa_c, phi_star, sup_abs_h
from .parareal import (
    PararealConfig,
    RationalPropagator,
    TableauPropagator,
    fine_reference,
    observed_rate,
    run_parareal,
    speedup_and_efficiency,
)
from .spatial import make_problem, spectrum_bounds
from .stability import classical_stability


@dataclass
class Check:
    """One compared quantity of a reproduction report."""

    name: str
    target: float
    value: float
    passed: bool
    extra: dict = field(default_factory=dict)

    @property
    def delta(self) -> float:
        return abs(self.value - self.target)


def s_star_ok(target: float, value: float) -> bool:
    if target < 2.0:
        return abs(value - target) <= targets.S_ABS_TOL
    return abs(value - target) <= targets.S_REL_TOL * target


def table1(js=targets.J_TABLE) -> list[Check]:
    out = []
    for (cp, fp), cells in targets.TABLE1.items():
        r = classical_stability(fp)
        R = coarse_spec("ocp:bundled" if cp == "ocp" else cp, fp).R
        for J, (phi_t, s_t) in zip(targets.J_TABLE, cells):
            if J not in js:
                continue
            res = phi_star(r, R, J)
            ok_phi = abs(res.phi_star - phi_t) <= targets.PHI_TOL
            ok_s = s_star_ok(s_t, res.s_star)
            out.append(Check(f"{cp}/{fp}/J={J}", phi_t, res.phi_star, ok_phi and ok_s,
                             {"cp": cp, "fp": fp, "J": J, "s_target": s_t, "s_star": res.s_star}))
    return out


def fig1() -> list[Check]:
    out = []
    for fp in targets.FP_TABLE:
        r = classical_stability(fp)
        R = coarse_spec("ocp:bundled", fp).R
        target = targets.H_BOUND.get(fp)
        try:
            _, hmax = sup_abs_h(r, R, 16)
            value = 112.0 * hmax
        except AssumptionViolated:
            value = math.nan
        if target is not None:
            tol = targets.H_REL_TOL.get(fp)
            ok = math.isfinite(value) and (
                abs(value - target) <= tol * target if tol else abs(math.log10(value / target)) <= 1.0
            )
            out.append(Check(f"h_bound/{fp}", target, value, ok, {"fp": fp, "quantity": "112*sup|h|"}))
        k = j_robustness(r, R, range(16, 129))
        kt = targets.K_SUP[fp]
        out.append(Check(f"k_sup/{fp}", kt, k, abs(k - kt) <= targets.K_REL_TOL * kt,
                         {"fp": fp, "quantity": "sup_J k(J)"}))
    return out


def make_coarse(cp: str, fp: str, substeps: int = 1) -> RationalPropagator:
    spec = coarse_spec(cp, fp)
    return RationalPropagator(spec.R, spec.weights, spec.nodes, substeps=substeps, name=spec.name)


def run_case(problem: str, cp: str, fp: str, J: int, dt: float, eta: float = 1e-12, K_max: int = 50,
             substeps: int = 1, T: float | None = None, M: int = 1000, reference=None, workers: int = 1):
    """One parareal run; returns (run, summary dict)."""
    prob = make_problem(problem, M=M, T=T)
    fine = TableauPropagator(fp, dt)
    cfg = PararealConfig(T=prob.T, dt=dt, J=J, K_max=K_max, eta=eta, coarse_substeps=substeps, workers=workers)
    seq = math.nan
    if reference is not None:
        reference, seq = reference
    run = run_parareal(prob, make_coarse(cp, fp, substeps), fine, cfg, reference=reference, sequential_seconds=seq)
    return run, summarize(run, prob, cp, fp)


def summarize(run, prob, cp: str, fp: str) -> dict:
    try:
        rate = observed_rate(run.errors)
    except ValueError:
        rate = math.nan
    s = {
        "iterations_to_eta": run.converged_at,
        "observed_rate": rate,
        "errors": [float(e) for e in run.errors],
        "N_c": run.cfg.N_c,
    }
    for flag, key in ((True, "with_G"), (False, "without_G")):
        try:
            sp_, eff = speedup_and_efficiency(run, include_coarse=flag)
        except ValueError:
            sp_, eff = math.nan, math.nan
        s[f"speedup_{key}"] = sp_
        s[f"efficiency_{key}"] = eff
    if prob.linear:
        lo, hi = spectrum_bounds(prob.evolution.A_h)
        spec = SpectrumSpec(lo, hi, 4096, run.cfg.dT)
        coarse = coarse_spec(cp, fp)
        s["kappa_c"] = kappa_c(classical_stability(fp), coarse.R, run.cfg.J, spec)
    return s


def iteration_table(table: dict, columns=None) -> list[Check]:
    """Iteration counts to eta for BE and the bundled OCP per fine propagator."""
    out = []
    cols = table["columns"] if columns is None else [c for c in table["columns"] if c[0] in columns]
    for fp, dt, be_t, ocp_t in cols:
        prob = make_problem(table["problem"], T=table["T"])
        cfg = PararealConfig(T=table["T"], dt=dt, J=table["J"], K_max=40, eta=table["eta"])
        ref = fine_reference(prob.evolution, TableauPropagator(fp, dt), cfg)
        counts = {}
        for cp, target in (("be", be_t), ("ocp:bundled", ocp_t)):
            run, summ = run_case(table["problem"], cp, fp, table["J"], dt, eta=table["eta"], K_max=40,
                                 substeps=table["substeps"], T=table["T"], reference=ref)
            k = run.converged_at
            counts[cp] = k
            ok = k is not None and abs(k - target) <= targets.ITER_TOL
            out.append(Check(f"{fp}/{cp}", target, np.nan if k is None else k, ok,
                             {"fp": fp, "cp": cp, "dt": dt, **{key: summ[key] for key in (
                                 "speedup_with_G", "speedup_without_G", "efficiency_with_G",
                                 "efficiency_without_G", "errors", "observed_rate")},
                                 "kappa_c": summ.get("kappa_c", math.nan)}))
        be, ocp = counts["be"], counts["ocp:bundled"]
        ordered = be is not None and ocp is not None and ocp < be
        out.append(Check(f"{fp}/ocp<be", 1.0, float(ordered), ordered, {"fp": fp}))
    return out
