import math

import numpy as np
import pytest

from ocpara.artifacts import coarse_spec
from ocpara.convfactor import (
    AssumptionViolated,
    InstabilityError,
    SpectrumSpec,
    fine_power,
    h_function,
    j_robustness,
    kappa,
    kappa_c,
    phi_star,
    sup_abs_h,
)
from ocpara.stability import RationalFn, classical_stability, evaluate


def test_fine_power_matches_direct_power():
    r = classical_stability("lobatto3")
    s = np.geomspace(1e-3, 1e3, 50)
    np.testing.assert_allclose(fine_power(r, s, 7), evaluate(r, s / 7) ** 7, rtol=1e-12, atol=1e-300)


def test_fine_power_large_j_no_overflow():
    r = classical_stability("be")
    assert fine_power(r, 1.0, 10**6) == pytest.approx(math.exp(-1.0), rel=1e-5)


def test_kappa_vanishes_when_coarse_equals_fine_power():
    be = classical_stability("be")
    assert kappa(be, be, 1, 2.5) == 0.0


def test_kappa_rejects_unstable_coarse():
    with pytest.raises(InstabilityError):
        kappa(classical_stability("be"), RationalFn([1.0, 2.0], [1.0, 1.0]), 4, 10.0)


@pytest.mark.parametrize("cp,fp,J,phi,s", [
    ("be", "lobatto3", 16, 0.298, 1.79),
    ("sdirk22", "radau3", 64, 0.262, 8.17),
    ("be", "lobatto2", 2, 0.264, 1.65),
])
def test_phi_star_classical(cp, fp, J, phi, s):
    res = phi_star(classical_stability(fp), classical_stability(cp), J)
    assert res.phi_star == pytest.approx(phi, abs=2e-3)
    assert res.s_star == pytest.approx(s, abs=0.1)


def test_phi_star_grid_validation():
    be = classical_stability("be")
    with pytest.raises(ValueError):
        phi_star(be, be, 4, s_lo=0.0)
    with pytest.raises(ValueError):
        phi_star(be, be, 4, n_grid=100)


def test_kappa_c_bounded_by_phi_star():
    r, R = classical_stability("radau3"), coarse_spec("ocp:bundled", "radau3").R
    spec = SpectrumSpec(1.0, 4e6, 4096, 0.2)
    assert kappa_c(r, R, 100, spec) <= phi_star(r, R, 100).phi_star + 1e-12


def test_spectrum_spec():
    spec = SpectrumSpec(1.0, 100.0, 3, 0.5, include_inf=True)
    np.testing.assert_allclose(spec.samples[:3], [0.5, 5.0, 50.0])
    assert math.isinf(spec.samples[-1])
    assert SpectrumSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ValueError):
        SpectrumSpec(2.0, 1.0)


def test_h_function_vs_finite_difference_in_j():
    # h is the J-derivative of kappa(r, R, J, z) at fixed z = J0 s, J treated as continuous
    r, R = classical_stability("radau3"), coarse_spec("ocp:bundled", "radau3").R
    s, J0 = 0.3, 16
    z, eps = J0 * s, 1e-4

    def k_of(J):
        return kappa(r, R, J, z)

    fd = (k_of(J0 + eps) - k_of(J0 - eps)) / (2 * eps)
    assert h_function(r, R, s, J0) == pytest.approx(fd, rel=1e-6)


def test_h_requires_positive_fine_function():
    r, R = classical_stability("lobatto3"), coarse_spec("ocp:bundled", "lobatto3").R
    with pytest.raises(AssumptionViolated):
        sup_abs_h(r, R)


def test_j_robustness_is_max():
    r, R = classical_stability("lobatto2"), coarse_spec("ocp:bundled", "lobatto2").R
    vals = [phi_star(r, R, J).phi_star for J in (16, 32, 64)]
    assert j_robustness(r, R, (16, 32, 64)) == max(vals)
