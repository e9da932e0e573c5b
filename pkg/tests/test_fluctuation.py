import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from levycsbp.environment import EnvironmentSpec, TwoSidedExponential
from levycsbp.errors import InversionInstabilityError, UnsupportedFamilyError
from levycsbp.fluctuation import (BrownianFamily, BrownianLinear, SpectrallyNegativeFamily,
                                  StableFamily, StablePowerRenewal, brownian_ell,
                                  brownian_inf_probability, brownian_inf_probability_erf,
                                  check_majP_bound, empirical_renewal, family_for, kappa_hat,
                                  renewal_eval, scale_function_invert, talbot)

# mpmath oracles
W_15_AT_1 = 1.12837916709551  # 1/Gamma(1.5)
W_18_AT_2 = 1.86937026480482  # 2^0.8/Gamma(1.8)
ERF = {1.0: 0.682689492137086, 4.0: 0.382924922548026, 100.0: 0.0796556745540580}
ELL = {1.0: 0.682689492137086, 10.0: 0.784783604172622}


def power_phi(a):
    return lambda s: np.power(s, a)


def test_renewal_examples():
    assert renewal_eval(BrownianLinear(1.0), 2.0) == 2.0
    assert StablePowerRenewal(1.5, 1.0 / 3.0)(1.0) == pytest.approx(1.0, rel=1e-14)
    assert BrownianLinear(1.0)(0.0) == 0.0
    assert StablePowerRenewal(1.5, 0.5)(0.0) == 0.0
    with pytest.raises(ValueError):
        BrownianLinear(1.0)(-1.0)


def test_scale_function_examples():
    W = scale_function_invert(power_phi(1.5), [1.0])
    assert W(1.0) == pytest.approx(W_15_AT_1, rel=1e-9)
    W18 = scale_function_invert(power_phi(1.8), [2.0])
    assert W18(2.0) == pytest.approx(W_18_AT_2, rel=1e-9)


def test_scale_function_accuracy_on_range():
    xs = np.linspace(0.1, 10.0, 25)
    W = scale_function_invert(power_phi(1.5), xs)
    exact = np.sqrt(xs) / math.gamma(1.5)
    np.testing.assert_allclose(W(xs), exact, rtol=1e-9)


def test_brownian_scale_function_and_rescale():
    W = scale_function_invert(lambda s: s * s / 2, [0.5, 1.0, 3.0])
    np.testing.assert_allclose(W([0.5, 1.0, 3.0]), [1.0, 2.0, 6.0], rtol=1e-9)
    V = W.rescaled(0.5)
    np.testing.assert_allclose(V([0.5, 1.0, 3.0]), [0.5, 1.0, 3.0], rtol=1e-9)
    assert "rescaled" in V.note
    assert W(0.0) == pytest.approx(0.0, abs=1e-12)


def test_scale_function_off_grid_evaluation():
    W = scale_function_invert(power_phi(1.5), [])
    assert W(2.5) == pytest.approx(math.sqrt(2.5) / math.gamma(1.5), rel=1e-9)


def test_inversion_instability_is_reported():
    with pytest.raises(InversionInstabilityError):
        scale_function_invert(power_phi(1.5), [1.0], levels=(3, 5), tol=1e-12)


def test_talbot_known_transform():
    assert talbot(lambda s: 1.0 / (s + 1.0), 2.0, 32) == pytest.approx(math.exp(-2.0), rel=1e-10)


def test_brownian_kappa_hat():
    fam = BrownianFamily()
    assert fam.kappa_hat(1.0) == pytest.approx(math.sqrt(2.0), rel=1e-15)
    for t in (1.0, 10.0, 1000.0):
        assert fam.kappa_hat(1.0 / t) * math.sqrt(t) == pytest.approx(math.sqrt(2.0), rel=1e-14)
    assert fam.kappa_hat(0.0) == 0.0
    assert kappa_hat(EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0), 2.0) == pytest.approx(2.0)


def test_spectrally_negative_kappa_hat_stable_case():
    fam = SpectrallyNegativeFamily(power_phi(1.5))
    assert fam.big_phi(8.0) == pytest.approx(4.0, rel=1e-12)
    assert fam.kappa_hat(8.0) == pytest.approx(2.0, rel=1e-12)
    assert fam.kappa_hat(0.0, 4.0) == pytest.approx(2.0, rel=1e-12)
    # general (q, theta), including the removable point theta = Phi(q)
    assert fam.kappa_hat(8.0, 1.0) == pytest.approx(7.0 / 3.0, rel=1e-12)
    assert fam.kappa_hat(8.0, 4.0) == pytest.approx(1.5 * 4.0**0.5, rel=1e-6)


def test_stable_family_kappa_hat():
    fam = StableFamily(1.5, 0.5)
    assert fam.kappa_hat(4.0) == pytest.approx(2.0)
    assert fam.kappa_hat(0.0, 4.0) == pytest.approx(4.0**0.75)
    with pytest.raises(UnsupportedFamilyError):
        fam.kappa_hat(1.0, 1.0)


@pytest.mark.parametrize("t", sorted(ERF))
def test_infimum_law_quadrature_vs_erf(t):
    q = brownian_inf_probability(1.0, t)
    assert abs(q - brownian_inf_probability_erf(1.0, t)) < 1e-8
    assert q == pytest.approx(ERF[t], abs=1e-12)


def test_ell_values_and_limit():
    for t, v in ELL.items():
        assert brownian_ell(t) == pytest.approx(v, rel=1e-10)
    assert brownian_ell(1e10) == pytest.approx(math.sqrt(2 / math.pi), rel=1e-4)


def test_infimum_ratio_is_asymptotically_linear():
    t = 1e4
    for x, y in ((2.0, 1.0), (3.0, 0.5)):
        ratio = brownian_inf_probability(x, t) / brownian_inf_probability(y, t)
        assert ratio == pytest.approx(x / y, rel=1e-2)


def test_majP_examples():
    rows = check_majP_bound(BrownianFamily(), [1.0], [1.0, 100.0])
    assert rows[0].lhs == pytest.approx(ERF[1.0], rel=1e-10)
    assert rows[0].rhs == pytest.approx(2 * math.e * math.sqrt(2.0), rel=1e-14)
    assert rows[1].lhs == pytest.approx(ERF[100.0], rel=1e-10)
    assert rows[1].rhs == pytest.approx(2 * math.e * math.sqrt(2 / 100), rel=1e-14)
    assert all(r.ok for r in rows)


def test_majP_monte_carlo_left_side():
    spec = EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0)
    rows = check_majP_bound(BrownianFamily(), [0.5, 2.0], [1.0, 5.0], spec=spec, n_paths=2000,
                            seed=3, dt=0.05)
    for r in rows:
        assert r.ok
        assert abs(r.lhs - brownian_inf_probability(r.x, r.t)) <= 4 * r.lhs_stderr + 0.02


def test_closed_form_left_side_needs_brownian():
    with pytest.raises(UnsupportedFamilyError):
        check_majP_bound(StableFamily(1.5, 0.5), [1.0], [1.0])


def _laplace_of_measure(V, theta):
    # int e^{-theta x} V(dx) = theta int e^{-theta x} V(x) dx when V(0) = 0
    f = lambda x: theta * math.exp(-theta * x) * float(V(x))
    a, _ = integrate.quad(f, 0, 1.0 / theta, epsabs=0, epsrel=1e-10, limit=200)
    b, _ = integrate.quad(f, 1.0 / theta, math.inf, epsabs=0, epsrel=1e-10, limit=200)
    return a + b


@pytest.mark.parametrize("theta", [0.1, 1.0, 10.0])
def test_laplace_consistency_closed_forms(theta):
    for fam in (BrownianFamily(), StableFamily(1.5, 0.5), StableFamily(1.2, 0.3)):
        val = _laplace_of_measure(fam.renewal(), theta)
        assert val * fam.kappa_hat(0.0, theta) == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("theta", [0.1, 1.0, 10.0])
def test_laplace_consistency_scale_function(theta):
    fam = SpectrallyNegativeFamily(power_phi(1.5))
    W = fam.renewal()
    c = 1.0 / theta
    # W(x) ~ sqrt(x) at 0: algebraic weight on the first piece
    head, _ = integrate.quad(lambda x: theta * math.exp(-theta * x) * W(x) / math.sqrt(x) if x > 0
                             else theta / math.gamma(1.5), 0, c, weight="alg", wvar=(0.5, 0.0),
                             epsabs=0, epsrel=1e-9)
    tail, _ = integrate.quad(lambda x: theta * math.exp(-theta * x) * W(x), c, math.inf,
                             epsabs=0, epsrel=1e-9, limit=200)
    assert (head + tail) * fam.kappa_hat(0.0, theta) == pytest.approx(1.0, rel=1e-6)


def test_linear_bounds():
    xs = np.linspace(0.0, 50.0, 101)
    for V in (BrownianLinear(1.0), StablePowerRenewal(1.5, 0.5), StablePowerRenewal(1.8, 0.5)):
        assert np.all(V(xs) <= V.linear_bound(xs) + 1e-12)
    assert np.all(BrownianLinear(2.0).linear_bound(xs) == 2.0 * xs)


@settings(max_examples=80, deadline=None)
@given(alpha=st.floats(0.2, 2.0), rho=st.floats(0.05, 0.95), x=st.floats(0.0, 100.0),
       y=st.floats(0.0, 100.0))
def test_stable_renewal_monotone_and_subadditive(alpha, rho, x, y):
    V = StablePowerRenewal(alpha, rho)
    if V.exponent > 1:
        return  # not a renewal function of a stable process
    assert V(x + y) <= V(x) + V(y) + 1e-6
    assert V(max(x, y)) >= V(min(x, y))
    if x > 0:
        assert V(x) > 0


def test_family_for():
    assert isinstance(family_for(EnvironmentSpec.from_kbar_drift(0.0, sigma=2.0)), BrownianFamily)
    with pytest.raises(UnsupportedFamilyError):
        family_for(EnvironmentSpec.from_kbar_drift(0.1, sigma=1.0))
    with pytest.raises(UnsupportedFamilyError):
        family_for(EnvironmentSpec.centered(1.0, TwoSidedExponential(1.0, 3.0, 1.0, 3.0)))


def test_empirical_renewal_brownian():
    spec = EnvironmentSpec.from_kbar_drift(0.0, sigma=1.0)
    V = empirical_renewal(spec, [0.5, 2.0], 50.0, 4000, seed=2, dt=0.05)
    assert V(1.0) == 1.0
    for x in (0.5, 2.0):
        exact = brownian_inf_probability(x, 50.0) / brownian_inf_probability(1.0, 50.0)
        i = V.xs.index(x)
        assert abs(V.values[i] - exact) <= 4 * V.stderr[i] + 0.01
    assert "approximate" in V.note
