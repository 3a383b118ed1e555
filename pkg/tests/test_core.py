import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npmle.core import (DegenerateRow, Grid, Incompatible, LogLikelihoodMatrix, check_weights, kkt_gap,
                        log_sum_exp, mixture_gradient, neg_log_likelihood)

NEG_INF = -np.inf


def L_of(rows):
    return LogLikelihoodMatrix.from_log_densities(np.array(rows, dtype=float))


def test_log_sum_exp_examples():
    assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert log_sum_exp([-1000.0, -1000.0]) == pytest.approx(-1000 + math.log(2), abs=1e-12)
    assert log_sum_exp([math.log(0.2), math.log(0.4)]) == pytest.approx(math.log(0.6), abs=1e-15)


def test_log_sum_exp_all_neg_inf():
    with pytest.raises(DegenerateRow):
        log_sum_exp([NEG_INF, NEG_INF])


def test_neg_log_likelihood_examples():
    L = L_of([[math.log(0.2), math.log(0.4)]])
    assert neg_log_likelihood(L, [0.5, 0.5]) == pytest.approx(-math.log(0.3), abs=1e-14)
    raw = np.array([[-3.0], [-1.5], [2.0]])
    assert neg_log_likelihood(L_of(raw), [1.0]) == pytest.approx(-raw.mean(), abs=1e-14)
    assert neg_log_likelihood(L_of([[0, NEG_INF], [NEG_INF, 0]]), [0.5, 0.5]) == pytest.approx(math.log(2))


def test_gradient_examples():
    L = L_of([[math.log(0.2), math.log(0.4)]])
    np.testing.assert_allclose(mixture_gradient(L, [0.5, 0.5]), [-2 / 3, -4 / 3], rtol=1e-14)
    np.testing.assert_allclose(mixture_gradient(L_of([[0, NEG_INF], [NEG_INF, 0]]), [0.5, 0.5]), [-1, -1])
    same = L_of([[-1.0, -1.0], [-4.0, -4.0]])
    g = mixture_gradient(same, [0.3, 0.7])
    assert g[0] == g[1]


def test_kkt_gap_examples():
    deg = L_of([[0, NEG_INF], [NEG_INF, 0]])
    assert kkt_gap(deg, [0.5, 0.5]) == pytest.approx(0.0, abs=1e-15)
    assert kkt_gap(deg, [0.9, 0.1]) == pytest.approx(4.0, rel=1e-12)
    assert kkt_gap(L_of([[-2.0], [-7.0]]), [1.0]) == pytest.approx(0.0, abs=1e-15)


def test_matrix_rejects_bad_rows():
    with pytest.raises(DegenerateRow):
        L_of([[NEG_INF, NEG_INF]])
    with pytest.raises(ValueError):
        L_of([[np.nan, 0.0]])
    with pytest.raises(ValueError):
        LogLikelihoodMatrix(np.array([[-1.0, -2.0]]), np.array([0.0]))


def test_matrix_shift_bookkeeping():
    raw = np.array([[-5.0, -3.0, NEG_INF], [10.0, 11.0, 12.0]])
    L = L_of(raw)
    assert np.all(L.entries.max(axis=1) == 0)
    np.testing.assert_array_equal(L.raw(), raw)
    assert L.dense[0, 2] == 0.0


def test_grid_validation():
    g = Grid([1.0, 2.0, 3.0])
    assert (g.q, g.dim) == (3, 1)
    with pytest.raises(ValueError):
        Grid([[0.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        Grid([[np.inf]])
    with pytest.raises(ValueError):
        Grid(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        g.atoms[0, 0] = 5.0


def test_check_weights():
    with pytest.raises(Incompatible):
        check_weights([0.5, 0.5], 3)
    with pytest.raises(ValueError):
        check_weights([0.6, 0.6])
    with pytest.raises(ValueError):
        check_weights([1.1, -0.1])


def _instance(seed, p, q):
    rng = np.random.default_rng(seed)
    raw = rng.normal(0, 3, (p, q))
    w1 = rng.dirichlet(np.ones(q))
    w2 = rng.dirichlet(np.ones(q))
    return raw, w1, w2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8), st.integers(1, 8))
def test_gradient_matches_finite_differences(seed, p, q):
    raw, w, _ = _instance(seed, p, q)
    L = L_of(raw)
    g = mixture_gradient(L, w)
    h = 1e-6
    for k in range(q):
        # the objective extends off the simplex by the same formula
        def f(wk):
            v = w.copy()
            v[k] = wk
            return -np.mean(np.log(np.exp(L.raw()) @ v))
        fd = (f(w[k] + h) - f(w[k] - h)) / (2 * h)
        assert fd == pytest.approx(g[k], rel=1e-5, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8), st.integers(1, 8), st.floats(0.01, 0.99))
def test_convexity_probe(seed, p, q, lam):
    raw, w1, w2 = _instance(seed, p, q)
    L = L_of(raw)
    mid = lam * w1 + (1 - lam) * w2
    mid /= mid.sum()
    lhs = neg_log_likelihood(L, mid)
    rhs = lam * neg_log_likelihood(L, w1) + (1 - lam) * neg_log_likelihood(L, w2)
    assert lhs <= rhs + 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8), st.integers(1, 8))
def test_kkt_gap_nonnegative(seed, p, q):
    raw, w, _ = _instance(seed, p, q)
    assert kkt_gap(L_of(raw), w) >= -1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8), st.integers(2, 8))
def test_row_shift_invariance(seed, p, q):
    raw, w, _ = _instance(seed, p, q)
    c = np.random.default_rng(seed + 1).normal(0, 50, p)
    L1, L2 = L_of(raw), L_of(raw + c[:, None])
    assert neg_log_likelihood(L2, w) - neg_log_likelihood(L1, w) == pytest.approx(-c.mean(), abs=1e-9)
    assert kkt_gap(L1, w) == pytest.approx(kkt_gap(L2, w), abs=1e-12)
    assert np.argmin(mixture_gradient(L1, w)) == np.argmin(mixture_gradient(L2, w))
