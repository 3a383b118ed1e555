"""Component densities f(X_j | theta) and per-observation MLEs.

Each kernel exposes three things:

* ``log_density(kernel, obs, atom)`` -- direct scalar evaluation,
* ``log_density_matrix(kernel, data, atoms)`` -- the vectorised p x q fill
  used to build a :class:`~npmle.core.LogLikelihoodMatrix`,
* ``mle(kernel, obs)`` -- the per-observation maximiser used for grids.

Atom coordinates per kernel:

=====================  ===========================
gaussian-location      (mu_1, ..., mu_d)
gaussian-location-scale (mu, sigma)
poisson-binomial       (lambda, pi)
two-class-gaussian     (mu0, mu1)
linear-regression      (mu, beta, log_sigma)
local-level-ss         (log_tau, log_sigma)
=====================  ===========================
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln

from .core import Grid, LogLikelihoodMatrix

LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    pass


class InsufficientSeries(ValueError):
    pass


class BoundaryMLE(UserWarning):
    pass


class KernelId(str, Enum):
    GAUSSIAN_LOCATION = "gaussian-location"
    GAUSSIAN_LOCATION_SCALE = "gaussian-location-scale"
    POISSON_BINOMIAL = "poisson-binomial"
    TWO_CLASS_GAUSSIAN = "two-class-gaussian"
    LINEAR_REGRESSION = "linear-regression"
    LOCAL_LEVEL_SS = "local-level-ss"

    @property
    def dim(self) -> int:
        return _DIMS[self]

    @property
    def coord_names(self) -> tuple:
        return _NAMES[self]


_DIMS = {
    KernelId.GAUSSIAN_LOCATION: 1,
    KernelId.GAUSSIAN_LOCATION_SCALE: 2,
    KernelId.POISSON_BINOMIAL: 2,
    KernelId.TWO_CLASS_GAUSSIAN: 2,
    KernelId.LINEAR_REGRESSION: 3,
    KernelId.LOCAL_LEVEL_SS: 2,
}
_NAMES = {
    KernelId.GAUSSIAN_LOCATION: ("mu",),
    KernelId.GAUSSIAN_LOCATION_SCALE: ("mu", "sigma"),
    KernelId.POISSON_BINOMIAL: ("lambda", "pi"),
    KernelId.TWO_CLASS_GAUSSIAN: ("mu0", "mu1"),
    KernelId.LINEAR_REGRESSION: ("mu", "beta", "log_sigma"),
    KernelId.LOCAL_LEVEL_SS: ("log_tau", "log_sigma"),
}


# ---------------------------------------------------------------------------
# observation containers


@dataclass(frozen=True)
class ReplicateObs:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size < 1 or not np.all(np.isfinite(v)):
            raise ValueError("replicates must be a non-empty finite vector")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class KnownVarObs:
    """A (possibly vector) observation with known isotropic variance."""

    value: np.ndarray
    variance: float

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        if not self.variance > 0:
            raise ValueError("variance must be positive")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "variance", float(self.variance))


@dataclass(frozen=True)
class CountPairObs:
    at_bats: int
    hits: int

    def __post_init__(self):
        if self.at_bats < 0 or self.hits < 0 or self.hits > self.at_bats:
            raise ValueError(f"need 0 <= hits <= at_bats, got ({self.at_bats}, {self.hits})")


@dataclass(frozen=True)
class TwoClassObs:
    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        lab = np.asarray(self.labels).ravel().astype(int)
        if v.shape != lab.shape:
            raise ValueError("values and labels differ in length")
        if not set(np.unique(lab)) <= {0, 1} or len(np.unique(lab)) != 2:
            raise ValueError("labels must contain both classes 0 and 1")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", lab)

    def stats(self):
        n0 = int(np.sum(self.labels == 0))
        n1 = int(np.sum(self.labels == 1))
        return (self.values[self.labels == 0].mean(), self.values[self.labels == 1].mean(), n0, n1)


@dataclass(frozen=True)
class RegressionObs:
    responses: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=float).ravel()
        x = np.asarray(self.covariates, dtype=float).ravel()
        if y.shape != x.shape:
            raise ValueError("responses and covariates differ in length")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "covariates", x)


@dataclass(frozen=True)
class SeriesObs:
    responses: np.ndarray
    covariates: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.responses, dtype=float).ravel()
        x = np.asarray(self.covariates, dtype=float).ravel()
        if y.shape != x.shape:
            raise ValueError("responses and covariates differ in length")
        if np.any(x == 0):
            raise ValueError("covariates must be nonzero")
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "covariates", x)

    def __len__(self):
        return len(self.responses)


def as_kernel(kernel) -> KernelId:
    try:
        return KernelId(kernel)
    except ValueError:
        raise ValueError(f"unknown kernel {kernel!r}; choose from {[k.value for k in KernelId]}") from None


# ---------------------------------------------------------------------------
# scalar densities


def _check_atom(kernel: KernelId, atom) -> np.ndarray:
    a = np.atleast_1d(np.asarray(atom, dtype=float))
    if not np.all(np.isfinite(a)):
        raise DomainError(f"non-finite atom {a}")
    _check_domain(kernel, a[None, :])
    return a


def _check_domain(kernel: KernelId, atoms: np.ndarray):
    if kernel is KernelId.GAUSSIAN_LOCATION_SCALE and np.any(atoms[:, 1] <= 0):
        raise DomainError("sigma must be positive")
    if kernel is KernelId.POISSON_BINOMIAL:
        if np.any(atoms[:, 0] <= 0):
            raise DomainError("lambda must be positive")
        if np.any((atoms[:, 1] <= 0) | (atoms[:, 1] >= 1)):
            raise DomainError("pi must lie in (0, 1)")


def log_density(kernel, obs, atom) -> float:
    kernel = as_kernel(kernel)
    a = _check_atom(kernel, atom)
    if kernel is KernelId.GAUSSIAN_LOCATION:
        x, v = obs.value, obs.variance
        if len(a) != len(x):
            raise DomainError("atom and observation dimensions differ")
        return float(-0.5 * len(x) * math.log(2 * math.pi * v) - np.sum((x - a) ** 2) / (2 * v))
    if kernel is KernelId.GAUSSIAN_LOCATION_SCALE:
        mu, s = a
        x = obs.values
        n = len(x)
        return float(-n * math.log(s) - 0.5 * n * LOG_2PI - np.sum((x - mu) ** 2) / (2 * s * s))
    if kernel is KernelId.POISSON_BINOMIAL:
        lam, pi = a
        A, H = obs.at_bats, obs.hits
        out = A * math.log(lam) - lam - math.lgamma(A + 1)
        out += math.lgamma(A + 1) - math.lgamma(H + 1) - math.lgamma(A - H + 1)
        out += H * math.log(pi) + (A - H) * math.log1p(-pi)
        return out
    if kernel is KernelId.TWO_CLASS_GAUSSIAN:
        # within-class sum of squares and 2*pi terms dropped
        m0, m1, n0, n1 = obs.stats()
        return float(-0.5 * (n0 * (m0 - a[0]) ** 2 + n1 * (m1 - a[1]) ** 2))
    if kernel is KernelId.LINEAR_REGRESSION:
        mu, beta, ls = a
        r = obs.responses - mu - beta * obs.covariates
        return float(-len(r) * ls - np.sum(r * r) / (2 * math.exp(2 * ls)))
    if kernel is KernelId.LOCAL_LEVEL_SS:
        return ss_filter(obs, a)[2]
    raise AssertionError(kernel)


# ---------------------------------------------------------------------------
# vectorised fills


def log_density_matrix(kernel, data: Sequence, atoms) -> np.ndarray:
    """Raw p x q matrix of log f(X_j | t_k)."""
    kernel = as_kernel(kernel)
    atoms = atoms.atoms if isinstance(atoms, Grid) else np.atleast_2d(np.asarray(atoms, dtype=float))
    _check_domain(kernel, atoms)
    if kernel is KernelId.GAUSSIAN_LOCATION:
        X = np.array([o.value for o in data], dtype=float)
        v = np.array([o.variance for o in data])
        if X.shape[1] != atoms.shape[1]:
            raise DomainError("atom and observation dimensions differ")
        sq = np.zeros((len(X), len(atoms)))
        for i in range(X.shape[1]):
            sq += (X[:, i, None] - atoms[None, :, i]) ** 2
        return -0.5 * X.shape[1] * np.log(2 * np.pi * v)[:, None] - sq / (2 * v[:, None])
    if kernel is KernelId.GAUSSIAN_LOCATION_SCALE:
        n = np.array([len(o.values) for o in data], dtype=float)
        m = np.array([o.values.mean() for o in data])
        S = np.array([np.sum((o.values - o.values.mean()) ** 2) for o in data])
        mu, s = atoms[:, 0], atoms[:, 1]
        quad = S[:, None] + n[:, None] * (m[:, None] - mu[None, :]) ** 2
        return -n[:, None] * np.log(s)[None, :] - 0.5 * n[:, None] * LOG_2PI - quad / (2 * s * s)[None, :]
    if kernel is KernelId.POISSON_BINOMIAL:
        A = np.array([o.at_bats for o in data], dtype=float)
        H = np.array([o.hits for o in data], dtype=float)
        lam, pi = atoms[:, 0], atoms[:, 1]
        const = -gammaln(H + 1) - gammaln(A - H + 1)
        return (const[:, None] + A[:, None] * np.log(lam)[None, :] - lam[None, :]
                + H[:, None] * np.log(pi)[None, :] + (A - H)[:, None] * np.log1p(-pi)[None, :])
    if kernel is KernelId.TWO_CLASS_GAUSSIAN:
        st = np.array([o.stats() for o in data])
        return two_class_log_density_matrix(st[:, 0], st[:, 1], st[:, 2], st[:, 3], atoms)
    if kernel is KernelId.LINEAR_REGRESSION:
        return np.vstack([_lm_row(o, atoms) for o in data])
    if kernel is KernelId.LOCAL_LEVEL_SS:
        return np.vstack([ss_cond_log_lik(o, atoms[:, 0], atoms[:, 1]) for o in data])
    raise AssertionError(kernel)


def two_class_log_density_matrix(m0, m1, n0, n1, atoms) -> np.ndarray:
    m0, m1 = np.asarray(m0, float), np.asarray(m1, float)
    n0, n1 = np.asarray(n0, float), np.asarray(n1, float)
    return -0.5 * (n0[:, None] * (m0[:, None] - atoms[None, :, 0]) ** 2
                   + n1[:, None] * (m1[:, None] - atoms[None, :, 1]) ** 2)


def _lm_row(obs: RegressionObs, atoms: np.ndarray) -> np.ndarray:
    # RSS(mu, beta) = RSS_ols + d' X'X d, with d the offset from the OLS fit
    y, x = obs.responses, obs.covariates
    n = len(y)
    X = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    rss0 = float(np.sum((y - X @ coef) ** 2))
    G = X.T @ X
    dm = atoms[:, 0] - coef[0]
    db = atoms[:, 1] - coef[1]
    rss = rss0 + G[0, 0] * dm * dm + 2 * G[0, 1] * dm * db + G[1, 1] * db * db
    ls = atoms[:, 2]
    return -n * ls - rss / (2 * np.exp(2 * ls))


def loglik_matrix(kernel, data: Sequence, grid) -> LogLikelihoodMatrix:
    return LogLikelihoodMatrix.from_log_densities(log_density_matrix(kernel, data, grid))


# ---------------------------------------------------------------------------
# local level state space model


def _kalman(y, x, log_tau, log_sigma):
    """Scalar Kalman recursion run for a batch of K parameter pairs at once.

    Returns (step_loglik, means, variances), each n x K.  Row 0 of
    step_loglik is zero: the first observation only initialises the state
    under a diffuse prior.
    """
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    n = len(y)
    if n < 2:
        raise InsufficientSeries(f"series of length {n}; need at least 2")
    tau2 = np.exp(2 * np.atleast_1d(np.asarray(log_tau, float)))
    sig2 = np.exp(2 * np.atleast_1d(np.asarray(log_sigma, float)))
    tau2, sig2 = np.broadcast_arrays(tau2, sig2)
    K = tau2.shape[0]
    ll = np.zeros((n, K))
    means = np.empty((n, K))
    variances = np.empty((n, K))
    m = np.full(K, y[0] / x[0])
    V = sig2 / x[0] ** 2
    means[0], variances[0] = m, V
    for i in range(1, n):
        P = V + tau2
        F = x[i] * x[i] * P + sig2
        e = y[i] - m * x[i]
        ll[i] = -0.5 * (LOG_2PI + np.log(F) + e * e / F)
        gain = P * x[i] / F
        m = m + gain * e
        V = P * sig2 / F
        means[i], variances[i] = m, V
    return ll, means, variances


def ss_filter(obs: SeriesObs, atom):
    """Filtered state means/variances and the conditional log-likelihood.

    The model is ``FS_i = alpha_i ISIG_i + sigma eps_i`` with
    ``alpha_i = alpha_{i-1} + tau delta_i``; atom is (log tau, log sigma).
    """
    a = np.asarray(atom, dtype=float)
    if a.shape != (2,) or not np.all(np.isfinite(a)):
        raise DomainError("state-space atom must be finite (log_tau, log_sigma)")
    ll, means, variances = _kalman(obs.responses, obs.covariates, a[0], a[1])
    return means[:, 0], variances[:, 0], float(ll.sum())


def ss_cond_log_lik(obs: SeriesObs, log_tau, log_sigma) -> np.ndarray:
    return _kalman(obs.responses, obs.covariates, log_tau, log_sigma)[0].sum(axis=0)


SS_SEARCH_BOX = (-8.0, 4.0)


def ss_mle_pooled(series: Sequence[SeriesObs], box=SS_SEARCH_BOX, coarse_step=0.1, refinements=3):
    """Maximise sum_j cond_log_lik_j over (log tau, log sigma) by grid search.

    A coarse grid over ``box`` x ``box`` is refined ``refinements`` times,
    each time zooming into +-1 previous step around the incumbent with a
    ten times finer step.
    """
    lo, hi = box

    def total(lt, ls):
        return sum(ss_cond_log_lik(s, lt, ls) for s in series)

    ax = np.arange(lo, hi + coarse_step / 2, coarse_step)
    LT, LS = np.meshgrid(ax, ax, indexing="ij")
    vals = total(LT.ravel(), LS.ravel())
    k = int(np.argmax(vals))
    best = np.array([LT.ravel()[k], LS.ravel()[k]])
    step = coarse_step
    for _ in range(refinements):
        step /= 10
        off = np.arange(-10, 11) * step
        lt = np.clip(best[0] + off, lo, hi)
        ls = np.clip(best[1] + off, lo, hi)
        LT, LS = np.meshgrid(lt, ls, indexing="ij")
        vals = total(LT.ravel(), LS.ravel())
        k = int(np.argmax(vals))
        best = np.array([LT.ravel()[k], LS.ravel()[k]])
    return best


# ---------------------------------------------------------------------------
# MLEs


def mle(kernel, obs) -> np.ndarray:
    kernel = as_kernel(kernel)
    if kernel is KernelId.GAUSSIAN_LOCATION:
        return obs.value.copy()
    if kernel is KernelId.GAUSSIAN_LOCATION_SCALE:
        x = obs.values
        if len(x) < 2:
            raise ValueError("location-scale kernel needs at least 2 replicates")
        mu = x.mean()
        s = math.sqrt(np.mean((x - mu) ** 2))
        if s == 0:
            warnings.warn("zero sample variance; sigma MLE on the boundary", BoundaryMLE, stacklevel=2)
        return np.array([mu, s])
    if kernel is KernelId.POISSON_BINOMIAL:
        if obs.at_bats < 1:
            raise ValueError("poisson-binomial MLE needs at_bats >= 1")
        if obs.hits in (0, obs.at_bats):
            warnings.warn(f"pi MLE on the boundary for {obs}", BoundaryMLE, stacklevel=2)
        return np.array([float(obs.at_bats), obs.hits / obs.at_bats])
    if kernel is KernelId.TWO_CLASS_GAUSSIAN:
        m0, m1, _, _ = obs.stats()
        return np.array([m0, m1])
    if kernel is KernelId.LINEAR_REGRESSION:
        y, x = obs.responses, obs.covariates
        if len(y) < 4:
            raise ValueError("linear-regression MLE needs at least 4 points")
        X = np.column_stack([np.ones(len(y)), x])
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        rss = float(np.sum((y - X @ coef) ** 2))
        if rss <= 0:
            warnings.warn("zero residual variance; log-sigma MLE is -inf", BoundaryMLE, stacklevel=2)
            return np.array([coef[0], coef[1], -np.inf])
        return np.array([coef[0], coef[1], 0.5 * math.log(rss / len(y))])
    if kernel is KernelId.LOCAL_LEVEL_SS:
        if len(obs) < 3:
            raise InsufficientSeries("state-space MLE needs at least 3 points")
        return ss_mle_pooled([obs])
    raise AssertionError(kernel)


def lm_predict(atom_means, covariate):
    mu, beta = atom_means[0], atom_means[1]
    return mu + beta * np.asarray(covariate, dtype=float)
