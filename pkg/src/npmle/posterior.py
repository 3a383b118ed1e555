"""Empirical Bayes quantities under a fitted discrete mixing distribution."""
from __future__ import annotations

from typing import Callable, Optional, Union

import numpy as np

from .core import DegenerateRow, Grid, LogLikelihoodMatrix, _row_lse, check_weights
from .kernels import KernelId, as_kernel, log_density_matrix


class Unsupported(ValueError):
    pass


def posterior_row(L_row, w) -> np.ndarray:
    """P(atom k | X_j) proportional to exp(L_row_k) w_k."""
    L_row = np.asarray(L_row, dtype=float)
    return posterior_matrix(L_row[None, :], w)[0]


def posterior_matrix(L, w) -> np.ndarray:
    """Posterior rows for every observation; accepts a LogLikelihoodMatrix or raw p x q logs."""
    entries = L.entries if isinstance(L, LogLikelihoodMatrix) else np.atleast_2d(np.asarray(L, float))
    w = check_weights(w, entries.shape[1])
    pos = w > 0
    a = entries[:, pos] + np.log(w[pos])
    lse = _row_lse(a)
    bad = np.flatnonzero(~np.isfinite(lse))
    if bad.size:
        raise DegenerateRow(f"row {bad[0]} has zero mixture density")
    out = np.zeros(entries.shape)
    out[:, pos] = np.exp(a - lse[:, None])
    out /= out.sum(axis=1, keepdims=True)
    return out


def _coord_values(grid: Grid, coord) -> np.ndarray:
    if callable(coord):
        return np.array([coord(t) for t in grid.atoms], dtype=float)
    if isinstance(coord, str):
        if grid.names is None or coord not in grid.names:
            raise KeyError(f"grid has no coordinate named {coord!r}")
        coord = grid.names.index(coord)
    return grid.atoms[:, int(coord)]


def posterior_mean(row, grid: Grid, coord: Union[int, str, Callable] = 0):
    """sum_k row_k coord(t_k); ``row`` may be one posterior row or a matrix of rows."""
    row = np.asarray(row, dtype=float)
    if row.shape[-1] != grid.q:
        raise ValueError(f"posterior has {row.shape[-1]} entries, grid has {grid.q} atoms")
    return row @ _coord_values(grid, coord)


def predictive_log_density(kernel, grid: Grid, w, new_obs, row=None) -> float:
    """log sum_k mix_k f(new_obs | t_k), mix = ``row`` if given else the prior ``w``."""
    mix = check_weights(w if row is None else row, grid.q)
    ld = log_density_matrix(kernel, [new_obs], grid)[0]
    pos = mix > 0
    lse = _row_lse((ld[pos] + np.log(mix[pos]))[None, :])[0]
    if not np.isfinite(lse):
        raise DegenerateRow("zero predictive density")
    return float(lse)


def marginalize(grid: Grid, w, dim: int):
    """List of (value, mass) for coordinate ``dim``, sorted by value."""
    w = check_weights(w, grid.q)
    if not 0 <= dim < grid.dim:
        raise ValueError(f"dim {dim} out of range for d={grid.dim}")
    vals, inv = np.unique(grid.atoms[:, dim], return_inverse=True)
    mass = np.bincount(inv.ravel(), weights=w, minlength=len(vals))
    return list(zip(vals.tolist(), mass.tolist()))


def sample_atoms(w, n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws of atom indices."""
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n_draws), side="right")
    return np.minimum(idx, len(w) - 1)


def sample_mixture(kernel, grid: Grid, w, n_draws: int, seed: int, n_replicates: int = 2,
                   variance: float = 1.0, labels=None):
    """Draw observations from the fitted mixture.

    Returns (atom_indices, draws).  ``draws`` is an array whose layout
    depends on the kernel: (A, H) pairs for poisson-binomial, n_replicates
    columns for gaussian-location-scale, d columns for gaussian-location, and
    one column per entry of ``labels`` for two-class-gaussian.
    """
    kernel = as_kernel(kernel)
    w = check_weights(w, grid.q)
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    if kernel in (KernelId.LINEAR_REGRESSION, KernelId.LOCAL_LEVEL_SS):
        raise Unsupported(f"no sampler for kernel {kernel.value}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = sample_atoms(w, n_draws, rng)
    th = grid.atoms[idx]
    if kernel is KernelId.POISSON_BINOMIAL:
        A = rng.poisson(th[:, 0])
        H = rng.binomial(A, th[:, 1])
        return idx, np.column_stack([A, H])
    if kernel is KernelId.GAUSSIAN_LOCATION_SCALE:
        return idx, th[:, :1] + th[:, 1:2] * rng.standard_normal((n_draws, n_replicates))
    if kernel is KernelId.GAUSSIAN_LOCATION:
        return idx, th + np.sqrt(variance) * rng.standard_normal(th.shape)
    if kernel is KernelId.TWO_CLASS_GAUSSIAN:
        if labels is None:
            raise ValueError("two-class sampling needs the label design")
        labels = np.asarray(labels, dtype=int)
        means = th[:, labels]
        return idx, means + rng.standard_normal(means.shape)
    raise AssertionError(kernel)
