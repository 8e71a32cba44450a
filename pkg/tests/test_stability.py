import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ocpara.stability import (
    DomainError,
    RationalFn,
    classical_stability,
    critical_points,
    derivative,
    eval_stable,
    evaluate,
    integrator_spec,
    pade_exp_neg,
    parse_scheme,
    positive_real_roots,
    sdirk22_stability,
    theta_stability,
)

SCHEMES = ["be", "sdirk22", "lobatto2", "lobatto3", "lobatto4", "radau3", "theta:0.52"]
GRID = np.geomspace(1e-4, 1e6, 5001)


def test_pade_low_orders():
    assert pade_exp_neg(0, 1).allclose(RationalFn([1.0], [1.0, 1.0]))
    # (1,1) is the trapezoidal rule
    assert pade_exp_neg(1, 1).allclose(RationalFn([1.0, -0.5], [1.0, 0.5]))


@pytest.mark.parametrize("k,j", [(0, 1), (1, 1), (0, 2), (1, 2), (1, 3), (2, 3), (2, 4)])
def test_pade_error_order(k, j):
    f = pade_exp_neg(k, j)
    lams = np.array([0.1, 0.05]) if k + j > 3 else np.array([1e-2, 5e-3])
    err = np.abs(evaluate(f, lams) - np.exp(-lams))
    slope = math.log(err[0] / err[1]) / math.log(2.0)
    assert slope == pytest.approx(k + j + 1, abs=0.15)


@pytest.mark.parametrize("name", SCHEMES)
def test_stability_order(name):
    spec = integrator_spec(name)
    lams = np.array([0.1, 0.05]) if spec.order > 2 else np.array([2e-2, 1e-2])
    err = np.abs(evaluate(spec.stability, lams) - np.exp(-lams))
    slope = math.log(err[0] / err[1]) / math.log(2.0)
    assert slope == pytest.approx(spec.order + 1, abs=0.15)


@pytest.mark.parametrize("name,pade", [
    ("be", (0, 1)), ("lobatto2", (0, 2)), ("lobatto3", (1, 3)), ("lobatto4", (2, 4)), ("radau3", (2, 3)),
])
def test_tableau_stability_is_pade(name, pade):
    assert classical_stability(name).allclose(pade_exp_neg(*pade), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("name", SCHEMES)
def test_p1_p3(name):
    r = classical_stability(name)
    assert np.all(np.abs(evaluate(r, GRID)) < 1.0)
    assert abs(evaluate(r, math.inf)) < 1.0


def test_sdirk_and_theta_formulas():
    assert classical_stability("sdirk22").allclose(sdirk22_stability())
    r = theta_stability(0.52)
    assert evaluate(r, math.inf) == pytest.approx(-0.48 / 0.52)
    assert classical_stability("Theta(0.52)").allclose(r)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1),
    st.floats(0.01, 10), st.floats(0.01, 10),
    st.floats(0, 1e6),
)
def test_eval_stable_matches_evaluate(a0, a1, a2, e1, e2, lam):
    f = RationalFn([a0, a1, a2], [1.0, e1, e2])
    ref = evaluate(f, lam)
    assert eval_stable(f, lam) == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_eval_stable_needs_quadratic():
    with pytest.raises(ValueError):
        eval_stable(RationalFn([1.0], [1.0, 1.0]), 1.0)


@pytest.mark.parametrize("name", SCHEMES)
def test_derivative_vs_finite_difference(name):
    r = classical_stability(name)
    d = derivative(r)
    lam = np.geomspace(1e-2, 1e2, 25)
    eps = 1e-6 * lam
    fd = (evaluate(r, lam + eps) - evaluate(r, lam - eps)) / (2 * eps)
    np.testing.assert_allclose(evaluate(d, lam), fd, rtol=1e-5, atol=1e-9)


def test_positive_real_roots():
    # (x - 1)(x - 3)(x + 2)
    c = np.polynomial.polynomial.polyfromroots([1.0, 3.0, -2.0])
    np.testing.assert_allclose(positive_real_roots(c), [1.0, 3.0])
    assert positive_real_roots([1.0, 0.0, 1.0]).size == 0
    np.testing.assert_allclose(positive_real_roots([-2.0, 1.0]), [2.0])


def test_critical_points_of_radau():
    r = classical_stability("radau3")
    for z in critical_points(r):
        assert abs(evaluate(derivative(r), z)) < 1e-10


def test_limits_and_domain():
    assert evaluate(RationalFn([1.0, 2.0], [1.0, 4.0]), math.inf) == 0.5
    assert evaluate(RationalFn([1.0], [1.0, 1.0]), math.inf) == 0.0
    with pytest.raises(DomainError):
        evaluate(RationalFn([1.0], [1.0, 1.0]), -1.0)
    with pytest.raises(DomainError):
        RationalFn([1.0], [0.0, 1.0])


def test_parse_scheme():
    assert parse_scheme("lobatto3") == ("LobattoIIIC3", None)
    assert parse_scheme("theta:0.52") == ("Theta", 0.52)
    assert parse_scheme("Theta(0.6)") == ("Theta", 0.6)
    with pytest.raises(ValueError):
        parse_scheme("rk4")
    with pytest.raises(ValueError):
        parse_scheme("theta")


def test_serialization_round_trip(tmp_path):
    f = classical_stability("radau3")
    assert RationalFn.loads(f.dumps()).allclose(f)
    f.save(tmp_path / "r.json")
    assert RationalFn.load(tmp_path / "r.json").allclose(f)
