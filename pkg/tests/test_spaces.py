import math

import numpy as np
import pytest
from scipy.integrate import quad

from curvelab import core as C
from curvelab import spaces as S
from curvelab.core import MarkovTriple
from curvelab.exceptions import InvalidParameterError
from curvelab.semigroup import decompose, heat_apply


# -- specs -----------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec("interval_diffusion", {"n": 1})
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec("interval_diffusion", {"n": 10, "a": 1.0, "b": 0.0})
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec("interval_diffusion", {"n": 10, "a": -math.inf, "b": 0.0})
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec("product", {"x": S.ou_spec(4)})
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec("moebius", {})


def test_spec_shorthand_and_json_round_trip():
    spec = S.SpaceSpec.parse("ou:50*circle:8")
    assert spec.kind == "product"
    again = S.SpaceSpec.from_json(spec.to_json())
    assert again == spec
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec.parse("ou")
    with pytest.raises(InvalidParameterError):
        S.SpaceSpec.parse("torus:4")


def test_custom_spec_from_file(tmp_path):
    g = S.random_graph(5, seed=2)
    path = tmp_path / "g.json"
    g.save(path)
    t = S.build(S.SpaceSpec.parse(str(path)))
    assert np.array_equal(t.measure, g.measure)


# -- builders ----------------------------------------------------------------------

def test_two_point_builder():
    t = S.build(S.SpaceSpec("two_point"))
    assert t.measure.tolist() == [1.0, 1.0]
    assert t.weights.toarray().tolist() == [[0.0, 1.0], [1.0, 0.0]]


def test_interval_weights_geometric_midpoint():
    t = S.build(S.ou_spec(11))
    x, h = t.coords, t.h
    V = 0.5 * x ** 2
    np.testing.assert_allclose(t.measure, np.exp(-V) * h)
    W = t.weights.toarray()
    np.testing.assert_allclose(np.diag(W, 1), np.exp(-(V[:-1] + V[1:]) / 2) / h)
    assert W[0, -1] == 0.0


def test_circle_is_periodic():
    t = S.build(S.circle_spec(8))
    W = t.weights.toarray()
    assert W[0, 7] > 0 and np.allclose(W.sum(axis=1), W[0].sum())


def test_ou400_K_star():
    K, _ = C.pointwise_be_optimal_K(S.build(S.ou_spec(400)), math.inf)
    assert abs(K - 1.0) <= 0.03


def test_interval_energy_second_order():
    exact = quad(lambda x: math.cos(x) ** 2 * math.exp(-x * x / 2), -5, 5,
                 epsabs=1e-12, epsrel=1e-12, limit=200)[0]
    errs = []
    for n in (101, 201, 401):
        t = S.build(S.ou_spec(n))
        f = np.sin(t.coords)
        errs.append(abs(C.dirichlet_energy(t, f, f) - exact))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.15)


def test_random_graph_is_seeded():
    a, b = S.random_graph(7, seed=9), S.random_graph(7, seed=9)
    assert np.array_equal(a.measure, b.measure)
    assert abs(a.weights - b.weights).max() == 0


# -- products -----------------------------------------------------------------------

def _single():
    return MarkovTriple.from_edges(1, [1.0], [])


def test_product_gamma_additivity():
    X, Y = S.random_graph(4, seed=1), S.random_graph(5, seed=2)
    Z = S.product(X, Y)
    rng = np.random.default_rng(0)
    for _ in range(5):
        F = rng.standard_normal((X.n, Y.n))
        GZ = C.carre_du_champ(Z, F.ravel()).reshape(X.n, Y.n)
        GX = np.column_stack([C.carre_du_champ(X, F[:, j]) for j in range(Y.n)])
        GY = np.vstack([C.carre_du_champ(Y, F[i]) for i in range(X.n)])
        assert np.abs(GZ - GX - GY).max() <= 1e-12 * max(1.0, np.abs(GZ).max())


def test_product_measure_and_spectrum():
    X, Y = S.random_graph(3, seed=4), S.random_graph(4, seed=5)
    Z = S.product(X, Y)
    np.testing.assert_allclose(Z.measure, np.kron(X.measure, Y.measure))
    sums = np.add.outer(decompose(X).eigenvalues, decompose(Y).eigenvalues).ravel()
    np.testing.assert_allclose(np.sort(decompose(Z).eigenvalues), np.sort(sums), atol=1e-12)


def test_product_semigroup_factorises():
    X, Y = S.random_graph(4, seed=6), S.build(S.ou_spec(6))
    Z = S.product(X, Y)
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal(X.n), rng.standard_normal(Y.n)
    lhs = heat_apply(decompose(Z), 0.3, np.kron(f, g))
    rhs = np.kron(heat_apply(decompose(X), 0.3, f), heat_apply(decompose(Y), 0.3, g))
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_product_with_single_state_is_isomorphic(ou100):
    Z = S.product(ou100, _single())
    assert np.array_equal(Z.measure, ou100.measure)
    assert abs(Z.weights - ou100.weights).max() == 0
    assert C.pointwise_be_optimal_K(Z, 3.0)[0] == C.pointwise_be_optimal_K(ou100, 3.0)[0]


def test_product_size_cap():
    big = S.build(S.ou_spec(100))
    with pytest.raises(InvalidParameterError):
        S.product(big, S.build(S.ou_spec(51)))


def test_two_point_square_curvature():
    Z = S.product(S.two_point(), S.two_point())
    K, _ = C.pointwise_be_optimal_K(Z, math.inf)
    assert abs(K - 2.0) <= 1e-9


@pytest.mark.parametrize("N", [2.0, 4.0, 10.0])
def test_two_point_tensorization_pattern(N):
    X = S.two_point()
    K = 2.0 - 2.0 / N
    rep = S.tensorization_check(X, K, N, X, K, N, tol=1e-9)
    assert rep.params["factor_X_pass"] and rep.params["factor_Y_pass"]
    assert rep.passed
    # measured product curve: K*(2N) of the square is never below the factor value
    assert rep.params["K_star_product"] >= K - 1e-9


# -- refinement study -----------------------------------------------------------------

def test_refinement_ou_converges_first_order():
    tab = S.refinement_study(S.ou_spec, [50, 100, 200, 400], math.inf, {"K_limit": 1.0})
    err = np.abs(tab.column("K_star") - 1.0)
    assert np.all(np.diff(err) < 0) and err[-1] <= 0.03
    assert tab.orders["K_star"] >= 0.8
    assert tab.to_csv().splitlines()[0] == ",".join(S.STUDY_COLUMNS)


def test_refinement_constant_family():
    tab = S.refinement_study(lambda n: S.ou_spec(60), [60, 60, 60])
    assert np.ptp(tab.column("K_star")) == 0.0


def test_refinement_partial_table_on_failure():
    def fam(n):
        if n > 60:
            raise RuntimeError("builder blew up")
        return S.ou_spec(n)
    tab = S.refinement_study(fam, [40, 50, 80])
    assert len(tab.rows) == 2 and "builder blew up" in tab.error


def test_refinement_validation():
    with pytest.raises(InvalidParameterError):
        S.refinement_study(S.ou_spec, [50, 100])
    with pytest.raises(InvalidParameterError):
        S.refinement_study(S.ou_spec, [100, 50, 200])
    with pytest.raises(InvalidParameterError):
        S.refinement_study(S.ou_spec, [50, 100, 200], report_cfg={"metrics": ["nope"]})


def test_refinement_residual_columns():
    tab = S.refinement_study(S.ou_spec, [50, 100, 200], math.inf,
                             {"metrics": ["dE_defect", "contraction_residual"], "pairs": 2})
    assert np.all(np.isfinite(tab.column("dE_defect")))
    assert np.all(np.isnan(tab.column("evi_residual")))
    assert "dE_defect" in tab.orders


def test_fitted_order():
    h = np.array([0.1, 0.05, 0.025])
    assert S.fitted_order(h, 3 * h ** 2) == pytest.approx(2.0)
    assert math.isnan(S.fitted_order(h, [0, 0, 0]))
