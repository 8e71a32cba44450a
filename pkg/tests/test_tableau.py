import math

import numpy as np
import pytest
import scipy.sparse as sp

from ocpara.spatial import make_problem
from ocpara.stability import RationalFn, classical_stability, evaluate
from ocpara.tableau import (
    LinearEvolution,
    RationalOperator,
    SemilinearEvolution,
    get_tableau,
    linear_irk_step,
    nonlinear_irk_step,
    order_condition_defects,
    rational_coarse_apply,
    rooted_trees,
    semi_implicit_coarse_step,
)

TABLEAUX = ["BE", "SDIRK22", "LobattoIIIC2", "LobattoIIIC3", "LobattoIIIC4", "RadauIIA3"]


def test_rooted_tree_counts():
    assert [len(rooted_trees(p)) for p in range(1, 7)] == [1, 1, 2, 4, 9, 20]


@pytest.mark.parametrize("name", TABLEAUX)
def test_order_conditions(name):
    tab = get_tableau(name)
    assert np.max(np.abs(order_condition_defects(tab, tab.order))) < 1e-13
    assert np.max(np.abs(order_condition_defects(tab, tab.order + 1))) > 1e-6


@pytest.mark.parametrize("name", TABLEAUX)
def test_row_sums_and_stiff_accuracy(name):
    tab = get_tableau(name)
    np.testing.assert_allclose(tab.A.sum(axis=1), tab.c, atol=1e-14)
    assert tab.stiffly_accurate


def _scalar_problem(lam, forcing=None):
    return LinearEvolution(sp.csr_matrix([[lam]]), np.array([1.0]), forcing)


@pytest.mark.parametrize("name", TABLEAUX)
def test_linear_step_matches_stability_function(name):
    tab = get_tableau(name)
    for lam, dt in [(0.3, 0.5), (50.0, 0.1), (1e4, 1.0)]:
        u = linear_irk_step(_scalar_problem(lam), tab, 0.0, dt, np.array([1.0]))
        assert u[0] == pytest.approx(evaluate(classical_stability(name), lam * dt), rel=1e-12, abs=1e-15)


@pytest.mark.parametrize("name", ["LobattoIIIC3", "RadauIIA3"])
def test_linear_forced_convergence_order(name):
    tab = get_tableau(name)
    # u' = -u + cos t has u = (cos t + sin t)/2 + e^{-t}/2 for u(0) = 1
    prob = _scalar_problem(1.0, lambda t: np.array([math.cos(t)]))
    exact = 0.5 * (math.cos(1.0) + math.sin(1.0)) + 0.5 * math.exp(-1.0)
    errs = []
    for n in (8, 16):
        u = np.array([1.0])
        for i in range(n):
            u = linear_irk_step(prob, tab, i / n, 1.0 / n, u)
        errs.append(abs(u[0] - exact))
    assert math.log2(errs[0] / errs[1]) > tab.order - 0.5


def _allen_cahn(M=64):
    return make_problem("allen-cahn:eps2=1", M=M).evolution


def test_newton_quadratic_convergence():
    prob = _allen_cahn()
    hist = []
    nonlinear_irk_step(prob, get_tableau("LobattoIIIC3"), 0.05, prob.u0, tol=1e-13, history=hist, newton="exact")
    r = [h for h in hist if h > 1e-13]
    assert len(r) >= 3
    # e_{k+1} <= C e_k^2 with a moderate constant
    ratios = [r[k + 1] / r[k] ** 2 for k in range(len(r) - 1)]
    assert max(ratios) < 1e3
    assert r[-1] / r[0] < 1e-6


def test_simplified_and_exact_newton_agree():
    prob = _allen_cahn()
    tab = get_tableau("RadauIIA3")
    a = nonlinear_irk_step(prob, tab, 0.02, prob.u0, tol=1e-12, newton="exact")
    b = nonlinear_irk_step(prob, tab, 0.02, prob.u0, tol=1e-12, newton="simplified")
    assert np.max(np.abs(a - b)) < 1e-9


def test_banded_and_sparse_newton_agree():
    base = make_problem("burgers:nu=0.02", M=80).evolution
    no_bands = SemilinearEvolution(base.A_h, base.u0, base.nonlinearity, base.jac)
    tab = get_tableau("LobattoIIIC3")
    a = nonlinear_irk_step(base, tab, 1e-3, base.u0, newton="exact")
    b = nonlinear_irk_step(no_bands, tab, 1e-3, base.u0, newton="exact")
    assert np.max(np.abs(a - b)) < 1e-12


def test_newton_rejects_unknown_mode():
    prob = _allen_cahn(16)
    with pytest.raises(ValueError):
        nonlinear_irk_step(prob, get_tableau("BE"), 0.1, prob.u0, newton="quasi")


def _spd(n=12, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = np.geomspace(1e-2, 1e3, n)
    return Q, lam, Q @ np.diag(lam) @ Q.T


@pytest.mark.parametrize("fp", ["radau3", "lobatto4", "sdirk22"])
def test_rational_operator_matches_eigendecomposition(fp):
    f = classical_stability(fp)
    Q, lam, X = _spd()
    v = np.linspace(-1.0, 1.0, len(lam))
    ref = Q @ (evaluate(f, lam) * (Q.T @ v))
    np.testing.assert_allclose(RationalOperator(f, sp.csr_matrix(X)).apply(v), ref, atol=1e-12)


def test_rational_operator_repeated_poles():
    f = RationalFn([1.0, 0.25], [1.0, 2.0, 1.0])  # double pole at -1
    Q, lam, X = _spd(8, 1)
    v = np.ones(8)
    ref = Q @ (evaluate(f, lam) * (Q.T @ v))
    np.testing.assert_allclose(RationalOperator(f, sp.csr_matrix(X)).apply(v), ref, atol=1e-12)


def test_be_coarse_step_is_backward_euler():
    prob = make_problem("diffusion-b", M=50).evolution
    be = classical_stability("be")
    dT = 0.1
    g = prob.f(dT)
    out = rational_coarse_apply(prob, be, [be], dT, prob.u0, [g])
    M = sp.identity(prob.size) + dT * prob.A_h
    ref = sp.linalg.spsolve(M.tocsc(), prob.u0 + dT * g)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_semi_implicit_step_is_linearly_implicit_euler():
    prob = _allen_cahn(32)
    be = classical_stability("be")
    dT = 0.05
    out = semi_implicit_coarse_step(prob, be, be, dT, prob.u0)
    M = sp.identity(prob.size) + dT * prob.A_h
    ref = sp.linalg.spsolve(M.tocsc(), prob.u0 + dT * prob.f(prob.u0))
    np.testing.assert_allclose(out, ref, atol=1e-12)
    with pytest.raises(ValueError):
        semi_implicit_coarse_step(prob, be, be, 0.0, prob.u0)
