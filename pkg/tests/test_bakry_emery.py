import math

import numpy as np
import pytest

from curvelab import bakry_emery as BE
from curvelab import core as C
from curvelab.exceptions import InvalidGridError, InvalidParameterError, NumericalError
from curvelab.semigroup import atom, decompose


# -- weights -------------------------------------------------------------------

def test_weights_at_zero_curvature():
    assert BE.weight_I(0.0, 1.7) == pytest.approx(1.7)
    assert BE.weight_I2(0.0, 1.7) == pytest.approx(1.7 ** 2 / 2)
    assert BE.weight_R(0.0, 1.7) == pytest.approx(1.0)


def test_weights_vanish_at_zero_time():
    for K in (-3.0, 0.0, 2.5):
        assert BE.weight_I(K, 0.0) == 0.0
        assert BE.weight_I2(K, 0.0) == 0.0


def test_weight_closed_form():
    assert BE.weight_I(1.0, 1.0) == pytest.approx(math.e - 1, rel=1e-15)
    assert BE.weight_I2(1.0, 1.0) == pytest.approx(math.e - 2, rel=1e-14)
    assert BE.weight_R(1.0, 1.0) == pytest.approx(1 / (math.e - 1), rel=1e-15)


def test_weights_continuous_across_series_cut():
    K = 1.0
    for t in (0.99e-4, 1.01e-4):
        assert BE.weight_I(K, t) == pytest.approx(math.expm1(K * t) / K, rel=1e-13)
        assert BE.weight_I2(K, t) == pytest.approx(
            (math.expm1(K * t) - K * t) / K ** 2, rel=1e-8)


def test_weights_vectorised():
    t = np.linspace(0, 2, 5)
    np.testing.assert_allclose(BE.weight_I(2.0, t), np.expm1(2 * t) / 2)


# -- interpolation functions ----------------------------------------------------

def test_interpolation_two_point_closed_form(two_point_dec):
    s = np.linspace(0, 1, 11)
    it = BE.interpolation_functions(two_point_dec, [0.0, 1.0], [1.0, 1.0], 1.0, s)
    np.testing.assert_allclose(it.A, 0.25 * (1 + np.exp(-4 * (1 - s))), atol=1e-14)
    # B = A' and B' = 2 C in closed form
    np.testing.assert_allclose(it.B, np.exp(-4 * (1 - s)), atol=1e-14)
    np.testing.assert_allclose(it.C, 2 * np.exp(-4 * (1 - s)), atol=1e-14)


def test_interpolation_constant_field(two_point_dec):
    it = BE.interpolation_functions(two_point_dec, [3.0, 3.0], [1.0, 2.0], 0.5,
                                    np.linspace(0, 0.5, 5))
    assert np.ptp(it.A) < 1e-14 * it.A[0] and np.abs(it.B).max() < 1e-15
    assert np.abs(it.C).max() < 1e-14


def test_interpolation_monotone_for_nonnegative_phi(ou100):
    dec = decompose(ou100)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(ou100.n)
    it = BE.interpolation_functions(dec, f, rng.random(ou100.n), 0.5, np.linspace(0, 0.5, 21))
    assert np.all(np.diff(it.A) >= -1e-14) and np.all(it.B >= 0)


def test_interpolation_grid_outside_range(two_point_dec):
    with pytest.raises(InvalidGridError):
        BE.interpolation_functions(two_point_dec, [0, 1], [1, 1], 1.0, [0.0, 1.5])


@pytest.mark.parametrize("space", ["two_point", "ou100"])
def test_richardson_ratio(space, two_point, ou100):
    triple = two_point if space == "two_point" else ou100
    dec = decompose(triple)
    rng = np.random.default_rng(0)
    f = rng.standard_normal(triple.n)
    phi = rng.random(triple.n) + 0.1
    r = BE.interpolation_richardson(dec, f, phi, 1.0, 0.5, 0.05)
    assert abs(r["A"][2] - 4) <= 0.3 and abs(r["B"][2] - 4) <= 0.3


# -- forms (ii) and (iii) ----------------------------------------------------------

def _extremal(triple, N=math.inf):
    K_star, per = C.pointwise_be_optimal_K(triple, N)
    x = int(np.nanargmin(per))
    _, f = C.local_curvature(triple, x, N, return_field=True)
    return K_star, f, atom(triple, x)


def test_form_ii_margin_and_failure(two_point, two_point_dec):
    K_star, f, phi = _extremal(two_point)
    t = 0.3
    s = np.linspace(0, t, 33)
    assert BE.check_form_ii(two_point_dec, K_star - 0.02, math.inf, f, phi, t, s).worst_residual <= 0
    assert not BE.check_form_ii(two_point_dec, K_star + 0.5, math.inf, f, phi, t, s).passed


def test_form_ii_constant_field(two_point_dec):
    rep = BE.check_form_ii(two_point_dec, 5.0, 2.0, [1.0, 1.0], [1.0, 1.0], 0.3,
                           np.linspace(0, 0.3, 9))
    assert rep.passed


def test_form_iii_convexity_at_zero_curvature(two_point_dec):
    rep = BE.check_form_iii(two_point_dec, 0.0, math.inf, [0.0, 1.0], [1.0, 2.0], 0.5,
                            np.linspace(0, 0.5, 33))
    assert rep.passed


def test_form_iii_constant_and_coarse_grid(two_point_dec):
    assert BE.check_form_iii(two_point_dec, 1.0, math.inf, [2.0, 2.0], [1.0, 1.0], 0.5,
                             np.linspace(0, 0.5, 9)).passed
    with pytest.raises(InvalidGridError):
        BE.check_form_iii(two_point_dec, 1.0, math.inf, [0, 1], [1, 1], 0.5,
                          np.linspace(0, 0.5, 4))


def test_form_iii_ou_passes(ou100):
    dec = decompose(ou100)
    rng = np.random.default_rng(2)
    f = rng.standard_normal(ou100.n)
    lam = np.abs(dec.eigenvalues).max()
    t = 1e-3 / lam
    rep = BE.check_form_iii(dec, 0.9, math.inf, f, rng.random(ou100.n), t,
                            np.linspace(0, t, 65), tol=1e-8)
    assert rep.passed
    assert "refinement_ratio" in rep.params


# -- pointwise forms --------------------------------------------------------------

@pytest.mark.parametrize("variant", ["iv", "v", "vi"])
def test_pointwise_forms_constant(two_point_dec, variant):
    assert BE.check_form_iv_v_vi(two_point_dec, 2.0, 3.0, [1.0, 1.0], 0.2, variant).passed


def test_form_vi_two_point_finite_dimension(two_point_dec):
    N = 10.0
    rep = BE.check_form_iv_v_vi(two_point_dec, 2 - 10 / N, N, [0.0, 1.0], 0.3, "vi")
    assert rep.passed


@pytest.mark.parametrize("variant", ["iv", "v", "vi"])
def test_pointwise_two_point_exact_detection(two_point_dec, variant):
    # equality case: the residual equals the curvature excess in the t -> 0 limit
    f = np.array([0.0, 1.0])
    t = 1e-6
    r_pass = BE.form_iv_v_vi_residual(two_point_dec, 1.98, math.inf, f, t, variant).max()
    r_fail = BE.form_iv_v_vi_residual(two_point_dec, 2.1, math.inf, f, t, variant).max()
    assert r_pass == pytest.approx(-0.02, abs=1e-4)
    assert r_fail == pytest.approx(0.1, abs=1e-4)


def test_form_vi_ou_gradient_bound(ou100):
    dec = decompose(ou100)
    for f in C.test_battery(ou100, size=6):
        assert BE.check_form_iv_v_vi(dec, 0.9, math.inf, f, 0.05, "vi", tol=1e-8).passed


def test_unknown_variant(two_point_dec):
    with pytest.raises(InvalidParameterError):
        BE.check_form_iv_v_vi(two_point_dec, 1.0, math.inf, [0, 1], 0.1, "vii")


# -- gradient-bound estimator --------------------------------------------------------

def test_estimator_two_point(two_point_dec):
    K = BE.estimate_K_from_gradient_bound(two_point_dec, [np.array([0.0, 1.0])],
                                          np.geomspace(1e-6, 1e-2, 5))
    assert K == pytest.approx(2.0, abs=1e-6)


def test_estimator_ignores_constants(ou100):
    dec = decompose(ou100)
    f = np.sin(ou100.coords)
    t = [1e-4, 1e-3]
    a = BE.estimate_K_from_gradient_bound(dec, [f], t)
    b = BE.estimate_K_from_gradient_bound(dec, [np.ones(ou100.n), f, 2 * np.ones(ou100.n)], t)
    assert a == b


def test_estimator_all_constant(two_point_dec):
    with pytest.raises(NumericalError):
        BE.estimate_K_from_gradient_bound(two_point_dec, [np.ones(2)], [0.1])


# -- ODE comparison ----------------------------------------------------------------

def test_ode_homogeneous_solution():
    s = np.linspace(0, 1, 201)
    K = 0.7
    rep = BE.check_ode_comparison(np.exp(2 * K * s), np.zeros_like(s), K, 0.0, s, tol=1e-4)
    assert abs(rep.worst_residual) < 1e-4


def test_ode_convex_quadratic():
    s = np.linspace(0, 1, 21)
    assert BE.check_ode_comparison(s ** 2, np.zeros_like(s), 0.0, 0.0, s).passed


def test_ode_interpolation_consistency(two_point, two_point_dec):
    K_star, f, phi = _extremal(two_point)
    t = 0.2
    s = np.linspace(0, t, 65)
    it = BE.interpolation_functions(two_point_dec, f, phi, t, s)
    assert BE.check_ode_comparison(it.A, 4 * it.B_delta, K_star - 0.02, 0.0, s).passed


def test_ode_nonmonotone_grid():
    with pytest.raises(InvalidGridError):
        BE.check_ode_comparison(np.zeros(5), np.zeros(5), 0, 0, [0, 0.2, 0.1, 0.3, 0.4])


def test_battery_report_order(two_point, two_point_dec):
    K_star, f, phi = _extremal(two_point)
    t = 1e-3 / 2
    reps = BE.equivalence_battery(two_point_dec, K_star - 0.02, math.inf, f, phi, t,
                                  np.linspace(0, t, 65), t_point=1e-5 / 2)
    assert [r.name for r in reps] == ["be_form_ii", "be_form_iii", "be_form_iv",
                                      "be_form_v", "be_form_vi", "ode_comparison"]
    assert all(r.passed for r in reps)
