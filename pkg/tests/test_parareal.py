import math

import numpy as np
import pytest

from ocpara.artifacts import coarse_spec
from ocpara.parareal import (
    PararealConfig,
    RationalPropagator,
    TableauPropagator,
    backward_euler,
    fine_reference,
    observed_rate,
    run_parareal,
    speedup_and_efficiency,
)
from ocpara.spatial import make_problem


def _ocp(fp):
    s = coarse_spec("ocp:bundled", fp)
    return RationalPropagator(s.R, s.weights, s.nodes, name=s.name)


def _small(tag="diffusion-b", M=60, T=1.0):
    return make_problem(tag, M=M, T=T)


def test_config_validation():
    with pytest.raises(ValueError):
        PararealConfig(T=1.0, dt=0.03, J=10)  # T not a multiple of dT
    with pytest.raises(ValueError):
        PararealConfig(T=1.0, dt=0.1, J=0)
    with pytest.raises(ValueError):
        PararealConfig(T=1.0, dt=0.1, J=1, eta=0.0)
    cfg = PararealConfig(T=1.0, dt=0.01, J=20)
    assert cfg.N_c == 5 and cfg.dT == pytest.approx(0.2)


def test_coarse_equal_to_fine_converges_immediately():
    prob = _small()
    cfg = PararealConfig(T=1.0, dt=0.05, J=1, eta=1e-12)
    run = run_parareal(prob, backward_euler(), TableauPropagator("be", 0.05), cfg)
    assert run.converged_at == 0
    assert run.errors[0] < 1e-13


def test_finite_termination_and_iterates():
    prob = _small()
    cfg = PararealConfig(T=1.0, dt=0.01, J=20, K_max=5, eta=1e-300, keep_iterates=True)
    run = run_parareal(prob, backward_euler(), TableauPropagator("lobatto3", 0.01), cfg)
    assert len(run.U) == run.iterations + 1 == cfg.N_c + 1
    assert run.errors[cfg.N_c] < 1e-12
    # after k iterations the first k coarse nodes are exact
    for k in range(1, cfg.N_c + 1):
        np.testing.assert_allclose(run.U[k][k], run.reference[k], atol=1e-12)


def test_determinism_and_workers():
    prob = _small("allen-cahn:eps2=1", M=40, T=0.4)
    cfg = PararealConfig(T=0.4, dt=0.01, J=5, K_max=4, eta=1e-300)
    fine = TableauPropagator("radau3", 0.01)
    a = run_parareal(prob, _ocp("radau3"), fine, cfg)
    b = run_parareal(prob, _ocp("radau3"), fine, cfg)
    c = run_parareal(prob, _ocp("radau3"), fine, PararealConfig(**{**cfg.__dict__, "workers": 2}))
    assert a.errors == b.errors
    np.testing.assert_allclose(a.errors, c.errors, rtol=0, atol=1e-14)


def test_ocp_beats_be_on_linear_problem():
    prob = _small(M=100)
    cfg = PararealConfig(T=1.0, dt=1 / 200, J=10, K_max=20, eta=1e-10)
    fine = TableauPropagator("lobatto3", cfg.dt)
    ref = fine_reference(prob.evolution, fine, cfg)
    be = run_parareal(prob, backward_euler(), fine, cfg, reference=ref[0], sequential_seconds=ref[1])
    oc = run_parareal(prob, _ocp("lobatto3"), fine, cfg, reference=ref[0], sequential_seconds=ref[1])
    assert oc.converged_at < be.converged_at


def test_reference_free_mode():
    prob = _small()
    cfg = PararealConfig(T=1.0, dt=0.01, J=10, K_max=20, eta=1e-9, reference_free=True)
    run = run_parareal(prob, backward_euler(), TableauPropagator("lobatto2", 0.01), cfg)
    assert run.reference is None and math.isnan(run.errors[-1])
    assert run.increments[run.converged_at - 1] <= 1e-9


def test_observed_rate_synthetic():
    errors = [1.0] + [0.05 * 0.3**k for k in range(1, 12)] + [0.0]
    assert observed_rate(errors) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        observed_rate([1.0, 1e-2, 1e-13])


def test_ledger_and_speedup():
    prob = _small()
    cfg = PararealConfig(T=1.0, dt=0.01, J=10, K_max=20, eta=1e-8)
    run = run_parareal(prob, backward_euler(), TableauPropagator("lobatto3", 0.01), cfg)
    led = run.ledger
    assert len(led.fine_seconds) == len(led.coarse_seconds) == run.iterations
    assert all(len(f) == cfg.N_c for f in led.fine_seconds)
    assert led.parallel_cost() >= led.parallel_cost(include_coarse=False) > 0
    s, e = speedup_and_efficiency(run)
    assert s > 0 and e == pytest.approx(s / cfg.N_c)
    s2, _ = speedup_and_efficiency(run, include_coarse=False)
    assert s2 >= s


def test_speedup_undefined_cases():
    prob = _small()
    cfg = PararealConfig(T=1.0, dt=0.01, J=10, K_max=1, eta=1e-14)
    run = run_parareal(prob, backward_euler(), TableauPropagator("lobatto3", 0.01), cfg)
    assert run.converged_at is None
    with pytest.raises(ValueError):
        speedup_and_efficiency(run)


def test_propagator_validation():
    with pytest.raises(ValueError):
        RationalPropagator(backward_euler().R, [], nodes=[1.0])
    with pytest.raises(ValueError):
        RationalPropagator(backward_euler().R, [backward_euler().R], substeps=0)
    prob = _small()
    with pytest.raises(ValueError):
        TableauPropagator("be", 0.03)(prob.evolution, 0.0, 0.1, prob.evolution.u0)
