import math

import numpy as np
import pytest

from curvelab import metric as M
from curvelab import spaces as S
from curvelab.core import MarkovTriple
from curvelab.exceptions import (DegenerateMetricError, InvalidGridError,
                                 InvalidParameterError)


def _cvxpy_distance(triple, x, y):
    cp = pytest.importorskip("cvxpy")
    psi = cp.Variable(triple.n)
    cons = [psi[x] == 0]
    for z in range(triple.n):
        nb = triple.neighbors(z)
        w = np.array([triple.weights[z, u] for u in nb])
        cons.append(cp.sum(cp.multiply(w, cp.square(psi[nb] - psi[z])))
                    <= 2.0 * triple.measure[z])
    prob = cp.Problem(cp.Maximize(psi[y]), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-12, tol_gap_rel=1e-12,
               tol_feas=1e-12)
    return prob.value


# -- MetricMatrix ------------------------------------------------------------------

def test_metric_matrix_validation():
    with pytest.raises(InvalidParameterError):
        M.MetricMatrix(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(InvalidParameterError):
        M.MetricMatrix(np.array([[1.0, 1.0], [1.0, 0.0]]))


def test_metric_csv_round_trip():
    d = M.MetricMatrix(np.array([[0.0, 1.5, np.inf], [1.5, 0.0, np.inf],
                                 [np.inf, np.inf, 0.0]]))
    e = M.MetricMatrix.from_csv(d.to_csv())
    assert np.array_equal(d.d, e.d)


def test_periodic_coordinates():
    d = M.MetricMatrix.from_coords(np.array([0.0, 1.0, 5.0]), period=6.0)
    assert d.d[0, 2] == pytest.approx(1.0)


# -- intrinsic distance -----------------------------------------------------------

def test_two_point_distance(two_point):
    d = M.intrinsic_distance(two_point)
    assert d.d[0, 1] == pytest.approx(math.sqrt(2), abs=1e-6)
    assert d.converged.all()


def test_single_state():
    t = MarkovTriple.from_edges(1, [1.0], [])
    assert M.intrinsic_distance(t).d.tolist() == [[0.0]]


def test_disconnected_pairs_are_infinite():
    t = MarkovTriple.from_edges(4, [1, 1, 1, 1], [(0, 1, 1.0), (2, 3, 1.0)])
    d = M.intrinsic_distance(t)
    assert math.isinf(d.d[0, 2]) and d.d[2, 3] == pytest.approx(math.sqrt(2), abs=1e-6)


def test_distance_is_a_metric(graphs):
    for g in graphs[:4]:
        d = M.intrinsic_distance(g)
        assert d.check_triangle(1e-9)
        assert np.array_equal(d.d, d.d.T) and np.all(np.diag(d.d) == 0)


@pytest.mark.parametrize("seed", range(6))
def test_distance_matches_convex_solver(seed):
    n = 3 + seed % 3
    g = S.random_graph(n, p=0.6, seed=100 + seed)
    d = M.intrinsic_distance(g)
    for x in range(n):
        for y in range(x + 1, n):
            assert d.d[x, y] == pytest.approx(_cvxpy_distance(g, x, y), abs=1e-6)


def test_ou_distance_close_to_euclidean():
    errs = []
    for n in (41, 81):
        t = S.build(S.ou_spec(n))
        errs.append(M.grid_distance_defect(t) / t.h)
    assert max(errs) <= 3.0


# -- slopes ----------------------------------------------------------------------

def test_slope_two_point(two_point_dE):
    np.testing.assert_allclose(M.local_slope(two_point_dE, [0.0, 3.0]), [3 / math.sqrt(2)] * 2)
    assert np.all(M.local_slope(two_point_dE, [2.0, 2.0]) == 0)


def test_slope_distance_function(graphs):
    d = M.intrinsic_distance(graphs[0])
    assert M.local_slope(d, d.d[0]).max() <= 1 + 1e-9


def test_slope_variants_and_degenerate():
    d = M.MetricMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert M.local_slope(d, [0.0, 1.0], "plus").tolist() == [1.0, 0.0]
    assert M.local_slope(d, [0.0, 1.0], "minus").tolist() == [0.0, 1.0]
    with pytest.raises(DegenerateMetricError):
        M.local_slope(M.MetricMatrix(np.zeros((2, 2))), [0.0, 1.0])
    with pytest.raises(InvalidParameterError):
        M.local_slope(d, [0.0, 1.0], "sideways")


# -- Hopf-Lax --------------------------------------------------------------------

def test_hopf_lax_two_point():
    d = M.MetricMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    for t in (0.1, 0.5, 1.0, 4.0):
        assert M.hopf_lax(d, [0.0, 1.0], t)[1] == pytest.approx(min(1.0, 1 / (2 * t)))
    assert np.all(M.hopf_lax(d, [2.0, 2.0], 0.3) == 2.0)
    np.testing.assert_allclose(M.hopf_lax(d, [0.0, 1.0], 1e9), [0.0, 0.0], atol=1e-8)


def test_hopf_lax_derivative_two_point():
    d = M.MetricMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    rep = M.hopf_lax_derivative_check(d, [0.0, 1.0], np.linspace(0.6, 3.0, 25))
    assert rep.passed and rep.worst_residual < 1e-12
    assert M.hopf_lax_derivative_check(d, [1.0, 1.0], [0.5, 1.0]).passed
    with pytest.raises(InvalidGridError):
        M.hopf_lax_derivative_check(d, [0.0, 1.0], [0.0, 1.0])


def test_hopf_lax_semigroup_defect_halves():
    defects = []
    for n in (101, 201, 401):
        t = S.build(S.ou_spec(n))
        d = M.MetricMatrix.from_triple_coords(t)
        defects.append(M.hopf_lax_semigroup_defect(d, np.cos(2 * t.coords), 0.2, 0.2))
    assert defects[0] > 0
    # at least halves per halving of h (measured: second order, ratio 4)
    r = [defects[0] / defects[1], defects[1] / defects[2]]
    assert all(v >= 2.0 for v in r), r


# -- length and ED ------------------------------------------------------------------

def test_length_defect_examples(two_point_dE):
    path = M.MetricMatrix(np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]], float))
    rep = M.length_defect(path)
    # the geodesic pair (0, 2) has its midpoint; neighbours never do
    assert rep.worst_residual == pytest.approx(0.5)
    mid = np.maximum(path.d[0], path.d[:, 2]).min() - 1.0
    assert mid == 0.0
    assert M.length_defect(two_point_dE).worst_residual == pytest.approx(math.sqrt(2) / 2)


def test_length_defect_refinement():
    vals = []
    for n in (41, 81):
        t = S.build(S.ou_spec(n))
        vals.append(M.length_defect(M.intrinsic_distance(t)).worst_residual)
    assert vals[0] / vals[1] == pytest.approx(2.0, rel=0.15)


def test_ed_two_point(two_point, two_point_dE):
    d = M.intrinsic_distance(two_point)
    psi = np.array([0.0, math.sqrt(2)])
    rep = M.ed_condition_check(two_point, d, tol=1e-6, psi_battery=[psi])
    assert abs(rep.params["lipschitz_residual"]) < 1e-6
    assert M.ed_condition_check(two_point, d, psi_battery=[np.ones(2)], tol=1e-6).passed


def test_ed_gamma_residual_decreases():
    res = []
    for n in (101, 201, 401):
        t = S.build(S.ou_spec(n))
        d = M.MetricMatrix.from_triple_coords(t)
        rep = M.ed_condition_check(t, d, psi_battery=[np.ones(t.n)], radii=[1.0, 2.0])
        res.append(abs(rep.params["gamma_residual"]))
    assert res[0] > res[1] > res[2]
