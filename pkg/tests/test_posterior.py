import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from npmle.core import Grid, LogLikelihoodMatrix
from npmle.kernels import CountPairObs, KernelId, KnownVarObs, loglik_matrix, log_density
from npmle.posterior import (Unsupported, marginalize, posterior_matrix, posterior_mean, posterior_row,
                             predictive_log_density, sample_mixture)
from npmle.solvers import SolverConfig, solve_em

GL = KernelId.GAUSSIAN_LOCATION


def test_posterior_row_examples():
    np.testing.assert_allclose(posterior_row([-3.0, -3.0], [0.5, 0.5]), [0.5, 0.5])
    np.testing.assert_array_equal(posterior_row([-1.0, -0.1], [1.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(posterior_row([math.log(0.2), math.log(0.4)], [0.5, 0.5]), [1 / 3, 2 / 3], rtol=1e-14)


def test_posterior_mean_examples():
    g = Grid([0.0, 5.0])
    assert posterior_mean([0.5, 0.5], g) == 2.5
    g2 = Grid([[1.0, 2.0], [3.0, -4.0], [0.5, 9.0]], names=("a", "b"))
    assert posterior_mean([0, 1, 0], g2, "b") == -4.0
    assert posterior_mean([0, 0, 1], g2, lambda t: t[0] * t[1]) == 4.5


def test_predictive_examples():
    g1 = Grid([1.5])
    obs = KnownVarObs(0.3, 2.0)
    assert predictive_log_density(GL, g1, [1.0], obs) == pytest.approx(log_density(GL, obs, [1.5]))
    g2 = Grid([-1.0, 1.0])
    assert predictive_log_density(GL, g2, [0.3, 0.7], KnownVarObs(0.0, 1.0)) == pytest.approx(norm.logpdf(1.0))
    g3 = Grid([0.0, 5.0])
    assert predictive_log_density(GL, g3, [0.5, 0.5], KnownVarObs(2.5, 1.0)) == pytest.approx(norm.logpdf(2.5), abs=1e-12)


def test_marginalize_examples():
    g = Grid([[0, 1], [0, 2], [1, 1]])
    assert marginalize(g, [0.2, 0.3, 0.5], 0) == [(0.0, 0.5), (1.0, 0.5)]
    g1 = Grid([3.0, 1.0, 2.0])
    assert marginalize(g1, [0.2, 0.3, 0.5], 0) == [(1.0, 0.3), (2.0, 0.5), (3.0, 0.2)]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 20), st.integers(1, 4))
def test_marginal_mass_conserved(seed, q, d):
    rng = np.random.default_rng(seed)
    atoms = np.unique(rng.integers(0, 3, (q, d)).astype(float), axis=0)
    w = rng.dirichlet(np.ones(len(atoms)))
    g = Grid(atoms)
    for k in range(d):
        assert sum(m for _, m in marginalize(g, w, k)) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_posterior_mean_in_atom_range(seed):
    rng = np.random.default_rng(seed)
    g = Grid(np.sort(rng.normal(0, 3, 8)))
    L = loglik_matrix(GL, [KnownVarObs(x, 0.5) for x in rng.normal(0, 5, 20)], g)
    pm = posterior_mean(posterior_matrix(L, rng.dirichlet(np.ones(8))), g)
    assert np.all(pm >= g.atoms.min() - 1e-12) and np.all(pm <= g.atoms.max() + 1e-12)


def test_posterior_concentrates_as_variance_vanishes():
    g = Grid(np.linspace(-2, 2, 9))
    row = loglik_matrix(GL, [KnownVarObs(0.6, 1e-6)], g).entries[0]
    post = posterior_row(row, np.full(9, 1 / 9))
    # nearest atom to 0.6 is 0.5 (index 5)
    assert np.argmax(post) == 5 and post[5] > 1 - 1e-12


def test_em_fixed_point_identity():
    rng = np.random.default_rng(1)
    g = Grid(np.linspace(-4, 4, 25))
    L = loglik_matrix(GL, [KnownVarObs(x, 1.0) for x in rng.normal(0, 2, 200)], g)
    fit = solve_em(L, SolverConfig(tol=1e-13, max_iter=200_000))
    np.testing.assert_allclose(posterior_matrix(L, fit.weights).mean(axis=0), fit.weights, atol=1e-8)


def test_sampling_point_mass_and_determinism():
    g = Grid([[20.0, 0.3], [50.0, 0.9]])
    idx, draws = sample_mixture(KernelId.POISSON_BINOMIAL, g, [1.0, 0.0], 500, seed=4)
    assert np.all(idx == 0)
    a = sample_mixture(KernelId.POISSON_BINOMIAL, g, [0.4, 0.6], 100, seed=9)
    b = sample_mixture(KernelId.POISSON_BINOMIAL, g, [0.4, 0.6], 100, seed=9)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_sampling_pb_rate():
    g = Grid([[20.0, 0.3]])
    _, draws = sample_mixture(KernelId.POISSON_BINOMIAL, g, [1.0], 100_000, seed=1)
    A, H = draws[:, 0], draws[:, 1]
    ok = A > 0
    rate = H[ok] / A[ok]
    se = rate.std() / math.sqrt(ok.sum())
    assert abs(rate.mean() - 0.3) <= 3 * se


def test_sampling_unsupported_kernels():
    for k in (KernelId.LINEAR_REGRESSION, KernelId.LOCAL_LEVEL_SS):
        with pytest.raises(Unsupported):
            sample_mixture(k, Grid([[0.0, 0.0]]), [1.0], 3, seed=0)


def test_posterior_accepts_raw_matrix():
    raw = np.array([[-1.0, -2.0], [-5.0, -0.5]])
    L = LogLikelihoodMatrix.from_log_densities(raw)
    np.testing.assert_allclose(posterior_matrix(raw, [0.3, 0.7]), posterior_matrix(L, [0.3, 0.7]))
