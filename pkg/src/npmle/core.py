"""Grid, weights and log-likelihood matrix data model.

Everything the solvers need is packed into :class:`LogLikelihoodMatrix`:
a p x q matrix of ``log f(X_j | t_k)`` stored with each row shifted so that
its maximum is exactly zero.  The objective, its gradient and the
first-order optimality gap are computed here in log space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SUPPORT_EPS = 1e-12
SIMPLEX_TOL = 1e-10
FLUSH = 1e-300


class DegenerateRow(ValueError):
    """An observation has zero likelihood under every atom (or under w)."""


class NonFinite(FloatingPointError):
    """A solver iterate became NaN/inf."""


class Incompatible(ValueError):
    """Two objects defined on different grids were combined."""


class InvariantViolation(AssertionError):
    """A solver broke monotonicity or left the simplex."""


@dataclass(frozen=True)
class Grid:
    """Finite support set of candidate atoms, one row per atom."""

    atoms: np.ndarray
    per_dim_counts: Optional[tuple] = None
    bounds: Optional[tuple] = None
    names: Optional[tuple] = None

    def __post_init__(self):
        atoms = np.array(self.atoms, dtype=float)
        if atoms.ndim == 1:
            # a flat list of scalars is a 1-D grid
            atoms = atoms.reshape(-1, 1)
        if atoms.size == 0:
            raise ValueError("grid must contain at least one atom")
        if not np.all(np.isfinite(atoms)):
            raise ValueError("grid atoms must be finite")
        if len(np.unique(atoms, axis=0)) != len(atoms):
            raise ValueError("grid contains duplicate atoms")
        if self.per_dim_counts is not None:
            counts = tuple(int(c) for c in self.per_dim_counts)
            if len(counts) != atoms.shape[1]:
                raise ValueError("per_dim_counts length does not match atom dimension")
            if len(atoms) > int(np.prod(counts)):
                raise ValueError("more atoms than the regular grid allows")
            object.__setattr__(self, "per_dim_counts", counts)
        atoms.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)

    @property
    def q(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def __len__(self):
        return self.q


class LogLikelihoodMatrix:
    """Row-max-shifted matrix of log densities.

    ``entries[j, k] = log f(X_j | t_k) - row_shifts[j]`` so every row has a
    maximum of exactly 0.  ``-inf`` marks atoms with zero likelihood.
    """

    def __init__(self, entries: np.ndarray, row_shifts: np.ndarray):
        entries = np.array(entries, dtype=float)
        row_shifts = np.array(row_shifts, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != row_shifts.shape[0]:
            raise ValueError("entries must be p x q with one shift per row")
        if np.any(np.isnan(entries)) or np.any(entries == np.inf):
            raise ValueError("log densities must be finite or -inf")
        if np.any(entries > 0) or not np.all(entries.max(axis=1) == 0):
            raise ValueError("each row must have maximum exactly 0")
        entries.setflags(write=False)
        row_shifts.setflags(write=False)
        self.entries = entries
        self.row_shifts = row_shifts
        self._dense = None

    @classmethod
    def from_log_densities(cls, raw) -> "LogLikelihoodMatrix":
        raw = np.array(raw, dtype=float)
        if raw.ndim == 1:
            raw = raw[None, :]
        if np.any(np.isnan(raw)) or np.any(raw == np.inf):
            raise ValueError("log densities must be finite or -inf")
        m = raw.max(axis=1)
        bad = np.flatnonzero(~np.isfinite(m))
        if bad.size:
            raise DegenerateRow(f"row {bad[0]} has zero likelihood under every atom")
        return cls(raw - m[:, None], m)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def q(self) -> int:
        return self.entries.shape[1]

    @property
    def dense(self) -> np.ndarray:
        """exp(entries), values in [0, 1]; cached, read-only."""
        if self._dense is None:
            d = np.exp(self.entries)
            # subnormals make every later matvec an order of magnitude slower
            d[d < FLUSH] = 0.0
            d.setflags(write=False)
            self._dense = d
        return self._dense

    def raw(self) -> np.ndarray:
        return self.entries + self.row_shifts[:, None]


@dataclass
class FitResult:
    weights: np.ndarray
    neg_log_lik: float
    iterations: int
    kkt_gap: float
    converged: bool
    solver_id: str
    trace: list = field(default_factory=list, repr=False)

    def support(self, eps: float = SUPPORT_EPS) -> np.ndarray:
        return np.flatnonzero(self.weights > eps)


def check_weights(w, q: Optional[int] = None) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or (q is not None and w.shape[0] != q):
        raise Incompatible(f"weights of length {w.shape} do not match q={q}")
    if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL or not np.all(np.isfinite(w)):
        raise ValueError("weights must lie on the probability simplex")
    return w


def log_sum_exp(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = v.max()
    if m == -np.inf:
        raise DegenerateRow("all entries are -inf")
    return float(m + np.log(np.sum(np.exp(v - m))))


def _row_lse(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=1)
    finite = np.isfinite(m)
    out = np.full(a.shape[0], -np.inf)
    mm = m[finite]
    out[finite] = mm + np.log(np.exp(a[finite] - mm[:, None]).sum(axis=1))
    return out


def log_mixture_density(L: LogLikelihoodMatrix, w) -> np.ndarray:
    """log sum_k exp(L_jk) w_k for each row, over atoms with w_k > 0."""
    w = check_weights(w, L.q)
    pos = w > 0
    logd = _row_lse(L.entries[:, pos] + np.log(w[pos]))
    bad = np.flatnonzero(~np.isfinite(logd))
    if bad.size:
        raise DegenerateRow(f"row {bad[0]} has zero mixture density under w")
    return logd


def neg_log_likelihood(L: LogLikelihoodMatrix, w) -> float:
    """Average negative log mixture likelihood on the absolute scale (row shifts restored)."""
    return float(-np.mean(log_mixture_density(L, w) + L.row_shifts))


def likelihood_ratios(L: LogLikelihoodMatrix, w) -> np.ndarray:
    """c_k = (1/p) sum_j f_jk / (f_j . w), the negated gradient."""
    logd = log_mixture_density(L, w)
    return np.exp(L.entries - logd[:, None]).sum(axis=0) / L.p


def mixture_gradient(L: LogLikelihoodMatrix, w) -> np.ndarray:
    return -likelihood_ratios(L, w)


def kkt_gap(L: LogLikelihoodMatrix, w) -> float:
    return float(likelihood_ratios(L, w).max() - 1.0)
