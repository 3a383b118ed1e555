"""Batting averages with a Poisson-binomial mixture over (lambda, pi).

At-bats A ~ Poisson(lambda) and hits H | A ~ Binomial(A, pi).  The fitted
mixing distribution is used to predict second-half averages by the
posterior mean of pi.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..grid import GridSpec, regular_grid
from ..kernels import CountPairObs, KernelId, loglik_matrix
from ..posterior import posterior_matrix, posterior_mean
from ..solvers import SolverConfig, solve
from .metrics import arcsin_transform, baseball_tse

CSV_HEADER = ["player_id", "is_pitcher", "ab1", "h1", "ab2", "h2"]
COHORTS = ("all", "pitchers", "non_pitchers")
MIN_AT_BATS = 10


class EmptyCohort(ValueError):
    pass


@dataclass(frozen=True)
class BaseballRecord:
    player_id: str
    is_pitcher: bool
    ab1: int
    h1: int
    ab2: int
    h2: int

    def __post_init__(self):
        if min(self.ab1, self.h1, self.ab2, self.h2) < 0:
            raise ValueError("counts must be nonnegative")
        if self.h1 > self.ab1 or self.h2 > self.ab2:
            raise ValueError("hits exceed at-bats")


def read_baseball_csv(path) -> list:
    """Parse the baseball CSV; malformed rows are dropped with a warning."""
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != CSV_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pit = row["is_pitcher"].strip()
                if pit not in ("0", "1"):
                    raise ValueError(f"is_pitcher must be 0 or 1, got {pit!r}")
                records.append(BaseballRecord(row["player_id"].strip(), pit == "1",
                                              int(row["ab1"]), int(row["h1"]),
                                              int(row["ab2"]), int(row["h2"])))
            except (ValueError, TypeError, AttributeError) as exc:
                warnings.warn(f"{path}:{lineno}: dropping malformed row ({exc})", stacklevel=2)
    return records


def write_baseball_csv(path, records: Sequence[BaseballRecord]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.player_id, int(r.is_pitcher), r.ab1, r.h1, r.ab2, r.h2])


def pi_bounds(at_bats, hits):
    """[min H/A, max H/A] clamped away from 0 and 1 by 1/(2 max A)."""
    at_bats = np.asarray(at_bats, dtype=float)
    rate = np.asarray(hits, dtype=float) / at_bats
    eps = 1.0 / (2.0 * at_bats.max())
    lo = min(max(rate.min(), eps), 1 - eps)
    hi = max(min(rate.max(), 1 - eps), eps)
    return lo, hi


def fit_poisson_binomial(at_bats, hits, counts=(30, 30), solver="em",
                         solver_cfg: Optional[SolverConfig] = None):
    """Returns (grid, fit, posterior mean of pi per player)."""
    at_bats = np.asarray(at_bats, dtype=int)
    hits = np.asarray(hits, dtype=int)
    data = [CountPairObs(int(a), int(h)) for a, h in zip(at_bats, hits)]
    spec = GridSpec(tuple(counts), explicit_bounds=[(at_bats.min(), at_bats.max()), pi_bounds(at_bats, hits)])
    cloud = np.column_stack([at_bats, hits / at_bats])
    grid = regular_grid(cloud, spec, names=KernelId.POISSON_BINOMIAL.coord_names)
    L = loglik_matrix(KernelId.POISSON_BINOMIAL, data, grid)
    fit = solve(L, solver, solver_cfg)
    pi_hat = posterior_mean(posterior_matrix(L, fit.weights), grid, 1)
    return grid, fit, pi_hat


@dataclass
class CohortResult:
    cohort: str
    n_train: int
    n_test: int
    tse: dict
    relative_tse: dict
    player_ids: list = field(repr=False, default_factory=list)
    pi_hat: np.ndarray = field(repr=False, default=None)
    fit: object = field(repr=False, default=None)
    grid: object = field(repr=False, default=None)


def _cohort(records, name):
    if name == "all":
        return list(records)
    if name == "pitchers":
        return [r for r in records if r.is_pitcher]
    if name == "non_pitchers":
        return [r for r in records if not r.is_pitcher]
    raise ValueError(f"unknown cohort {name!r}")


def baseball_pipeline(records: Sequence[BaseballRecord], counts=(30, 30), solver="em",
                      solver_cfg: Optional[SolverConfig] = None, cohorts=COHORTS) -> dict:
    """Fit each cohort separately and score MLE, grand mean and NPMLE.

    Training players have more than 10 first-half at-bats; they are scored
    if they also have more than 10 second-half at-bats.
    """
    out = {}
    for name in cohorts:
        train = [r for r in _cohort(records, name) if r.ab1 > MIN_AT_BATS]
        if not train:
            raise EmptyCohort(f"cohort {name!r} has no players with more than {MIN_AT_BATS} at-bats")
        A = np.array([r.ab1 for r in train])
        H = np.array([r.h1 for r in train])
        grid, fit, pi_hat = fit_poisson_binomial(A, H, counts, solver, solver_cfg)
        w_mle = arcsin_transform(H, A)
        test = np.array([r.ab2 > MIN_AT_BATS for r in train])
        if not test.any():
            raise EmptyCohort(f"cohort {name!r} has no players with more than {MIN_AT_BATS} second-half at-bats")
        A2 = np.array([r.ab2 for r in train])[test]
        H2 = np.array([r.h2 for r in train])[test]
        estimates = {
            "mle": w_mle[test],
            "grand_mean": np.full(test.sum(), w_mle.mean()),
            "npmle": np.arcsin(np.sqrt(pi_hat))[test],
        }
        errs = {k: baseball_tse(v, H2, A2) for k, v in estimates.items()}
        rel = {k: v / errs["mle"] for k, v in errs.items()}
        out[name] = CohortResult(name, len(train), int(test.sum()), errs, rel,
                                 [r.player_id for r in train], pi_hat, fit, grid)
    return out


def synthetic_records(seed: int, n_players: int = 600, atoms=((40.0, 0.15), (220.0, 0.27)),
                      probs=(0.25, 0.75)) -> list:
    """Players drawn from a known two-atom (lambda, pi) mixture; atom 0 are pitchers."""
    rng = np.random.Generator(np.random.PCG64(seed))
    atoms = np.asarray(atoms, dtype=float)
    k = rng.choice(len(atoms), size=n_players, p=probs)
    lam, pi = atoms[k, 0], atoms[k, 1]
    ab1 = rng.poisson(lam)
    ab2 = rng.poisson(lam)
    h1 = rng.binomial(ab1, pi)
    h2 = rng.binomial(ab2, pi)
    return [BaseballRecord(f"p{j:04d}", bool(k[j] == 0), int(ab1[j]), int(h1[j]), int(ab2[j]), int(h2[j]))
            for j in range(n_players)]
