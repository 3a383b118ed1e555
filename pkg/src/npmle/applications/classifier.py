"""Empirical Bayes classifier with a bivariate prior on per-feature class means.

Each feature j has class means (mu_j0, mu_j1) drawn iid from one unknown
mixing distribution over a shared 2-D grid; expression values are unit
variance Gaussians around their class mean.  Classification plugs the
fitted prior into the naive Bayes rule, using every feature's posterior
over atoms given the training data.

``joint=False`` gives the independent-prior variant: one univariate
mixing distribution per class, fitted separately.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import Grid, LogLikelihoodMatrix, _row_lse
from ..grid import GridSpec, default_counts, regular_grid
from ..kernels import KernelId, KnownVarObs, LOG_2PI, loglik_matrix, two_class_log_density_matrix
from ..posterior import posterior_matrix
from ..solvers import SolverConfig, solve_em


@dataclass
class _Prior:
    grid: Grid
    weights: np.ndarray
    post: np.ndarray       # features x atoms
    means: np.ndarray      # atoms x 2, class-0 and class-1 mean per atom
    log_post: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        with np.errstate(divide="ignore"):
            self.log_post = np.log(self.post)


@dataclass
class ClassifierModel:
    joint: bool
    features: np.ndarray   # indices of features kept
    n0: int
    n1: int
    log_prior_odds: float
    priors: list = field(repr=False, default_factory=list)
    fits: list = field(repr=False, default_factory=list)


def _class_stats(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(int)
    if set(np.unique(y)) != {0, 1}:
        raise ValueError("labels must contain both classes 0 and 1")
    ok = ~np.isnan(X)
    c0 = (ok & (y[:, None] == 0)).sum(axis=0)
    c1 = (ok & (y[:, None] == 1)).sum(axis=0)
    keep = (c0 > 0) & (c1 > 0)
    if not keep.all():
        warnings.warn(f"excluding {int((~keep).sum())} feature(s) with an empty class", stacklevel=3)
    Xz = np.where(ok, X, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        m0 = (Xz * (y[:, None] == 0)).sum(axis=0) / c0
        m1 = (Xz * (y[:, None] == 1)).sum(axis=0) / c1
    return m0[keep], m1[keep], c0[keep], c1[keep], np.flatnonzero(keep)


def fit_classifier(X, y, counts=(30, 30), joint: bool = True, q1d: Optional[int] = None,
                   solver_cfg: Optional[SolverConfig] = None) -> ClassifierModel:
    """X is subjects x features, y the 0/1 labels."""
    y = np.asarray(y).astype(int)
    m0, m1, c0, c1, keep = _class_stats(X, y)
    n0, n1 = int(np.sum(y == 0)), int(np.sum(y == 1))
    model = ClassifierModel(joint, keep, n0, n1, float(np.log(n1 / n0)))
    if joint:
        cloud = np.column_stack([m0, m1])
        grid = regular_grid(cloud, GridSpec(tuple(counts)), names=KernelId.TWO_CLASS_GAUSSIAN.coord_names)
        L = LogLikelihoodMatrix.from_log_densities(two_class_log_density_matrix(m0, m1, c0, c1, grid.atoms))
        fit = solve_em(L, solver_cfg)
        model.priors = [_Prior(grid, fit.weights, posterior_matrix(L, fit.weights), grid.atoms)]
        model.fits = [fit]
        return model
    q = q1d or default_counts(1, len(keep))[0]
    for m, c in ((m0, c0), (m1, c1)):
        data = [KnownVarObs(v, 1.0 / n) for v, n in zip(m, c)]
        grid = regular_grid(m[:, None], GridSpec((q,)), names=("mu",))
        L = loglik_matrix(KernelId.GAUSSIAN_LOCATION, data, grid)
        fit = solve_em(L, solver_cfg)
        means = np.repeat(grid.atoms, 2, axis=1)
        model.priors.append(_Prior(grid, fit.weights, posterior_matrix(L, fit.weights), means))
        model.fits.append(fit)
    return model


def _predictive(prior: _Prior, x, k: int) -> np.ndarray:
    """log sum_a post_ja N(x_j; mean_k(a), 1) for every kept feature j."""
    ld = -0.5 * LOG_2PI - 0.5 * (x[:, None] - prior.means[None, :, k]) ** 2
    return _row_lse(ld + prior.log_post)


def feature_terms(model: ClassifierModel, x) -> np.ndarray:
    """Per-feature log-likelihood ratio, class 1 over class 0; 0 for missing x_j."""
    x = np.asarray(x, dtype=float)[model.features]
    miss = np.isnan(x)
    xf = np.where(miss, 0.0, x)
    if model.joint:
        t = _predictive(model.priors[0], xf, 1) - _predictive(model.priors[0], xf, 0)
    else:
        t = _predictive(model.priors[1], xf, 1) - _predictive(model.priors[0], xf, 0)
    t[miss] = 0.0
    return t


def decision_score(model: ClassifierModel, x) -> float:
    return float(np.sum(feature_terms(model, x)) + model.log_prior_odds)


def classify(model: ClassifierModel, x) -> int:
    return int(decision_score(model, x) >= 0)


def predict(model: ClassifierModel, X) -> np.ndarray:
    return np.array([classify(model, x) for x in np.atleast_2d(X)])


def confusion(y_true, y_pred) -> dict:
    y_true = np.asarray(y_true).astype(int)
    y_pred = np.asarray(y_pred).astype(int)
    return {"tn": int(np.sum((y_true == 0) & (y_pred == 0))), "fp": int(np.sum((y_true == 0) & (y_pred == 1))),
            "fn": int(np.sum((y_true == 1) & (y_pred == 0))), "tp": int(np.sum((y_true == 1) & (y_pred == 1))),
            "errors": int(np.sum(y_true != y_pred)), "n": int(len(y_true))}


# ---------------------------------------------------------------------------
# data files and synthetic designs


def read_matrix_csv(path, labelled: bool = True):
    """Rows are subjects; first column is the label when ``labelled``."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ValueError(f"{path}:{lineno}: expected {width} fields, got {len(row)}")
            try:
                vals = [float(v) if v.strip() != "" else np.nan for v in row]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if labelled:
                if vals[0] not in (0.0, 1.0):
                    raise ValueError(f"{path}:{lineno}: label must be 0 or 1")
                labels.append(int(vals[0]))
                vals = vals[1:]
            rows.append(vals)
    X = np.array(rows, dtype=float)
    return (X, np.array(labels, dtype=int)) if labelled else (X, None)


def write_matrix_csv(path, X, y=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ([] if y is None else ["label"]) + [f"f{j}" for j in range(X.shape[1])]
        w.writerow(head)
        for i, row in enumerate(X):
            w.writerow(([] if y is None else [int(y[i])]) + [repr(float(v)) for v in row])


def synthetic_shifted(seed: int, p: int = 500, n_train: int = 60, n_test: int = 100,
                      frac: float = 0.1, shift: float = 2.0):
    """Class 1 is shifted by ``shift`` on a random ``frac`` of features."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mu0 = np.zeros(p)
    mu1 = np.zeros(p)
    idx = rng.choice(p, size=int(round(frac * p)), replace=False)
    mu1[idx] = shift
    return _draw(rng, mu0, mu1, n_train, n_test)


def synthetic_correlated(seed: int, p: int = 500, n_train: int = 40, n_test: int = 100,
                         frac: float = 0.1, shift: float = 0.8, spread: float = 1.0):
    """Feature baselines vary widely; class means coincide except on a sparse subset."""
    rng = np.random.Generator(np.random.PCG64(seed))
    mu0 = spread * rng.standard_normal(p)
    mu1 = mu0.copy()
    idx = rng.choice(p, size=int(round(frac * p)), replace=False)
    mu1[idx] += shift * rng.choice([-1.0, 1.0], size=len(idx))
    return _draw(rng, mu0, mu1, n_train, n_test)


def _draw(rng, mu0, mu1, n_train, n_test):
    def sample(n):
        y = np.arange(n) % 2
        rng.shuffle(y)
        means = np.where(y[:, None] == 1, mu1[None, :], mu0[None, :])
        return means + rng.standard_normal(means.shape), y
    Xtr, ytr = sample(n_train)
    Xte, yte = sample(n_test)
    return Xtr, ytr, Xte, yte
