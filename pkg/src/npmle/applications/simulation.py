"""Gaussian location-scale simulation study (normal means with unknown,
possibly mean-correlated, noise levels)."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import Grid
from ..grid import GridSpec, default_counts, regular_grid
from ..kernels import KernelId, KnownVarObs, ReplicateObs, loglik_matrix
from ..posterior import posterior_matrix, posterior_mean
from ..solvers import SolverConfig, delta_log_lik, solve_em, solve_frank_wolfe
from .metrics import mean_sd, soft_threshold, soft_threshold_oracle, tse

DIST1 = "dist1"
DIST2 = "dist2"

ALL_ESTIMATORS = ("mle", "soft_threshold", "npmle_1d_plugin", "npmle_1d_known",
                  "npmle_2d_em", "npmle_2d_fw")
UNAVAILABLE = ("james_stein", "sure")


@dataclass
class SimConfig:
    p: int = 1000
    n: int = 16
    mixing_id: str = DIST1
    reps: int = 1
    seed: int = 0

    def __post_init__(self):
        self.mixing_id = str(self.mixing_id).lower().replace("_", "")
        if self.mixing_id in ("1", "2"):
            self.mixing_id = "dist" + self.mixing_id
        if self.mixing_id not in (DIST1, DIST2):
            raise ValueError(f"unknown mixing distribution {self.mixing_id!r}")
        if self.p < 1 or self.n < 2 or self.reps < 1:
            raise ValueError("need p >= 1, n >= 2, reps >= 1")


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep`` spawned from the master seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed).spawn(rep + 1)[rep]))


def simulate_gls(cfg: SimConfig, rep: int = 0):
    """(data, truth_mu, truth_sigma) for one replication."""
    rng = replication_rng(cfg.seed, rep)
    comp = rng.random(cfg.p) < 0.5
    if cfg.mixing_id == DIST1:
        mu = np.where(comp, 5.0, 0.0)
        sigma = np.full(cfg.p, 4.0)
    else:
        mu = np.where(comp, 5.0, 0.0)
        sigma = np.where(comp, 3.0, 5.0)
    X = mu[:, None] + sigma[:, None] * rng.standard_normal((cfg.p, cfg.n))
    return [ReplicateObs(x) for x in X], mu, sigma


def _summaries(data):
    X = np.vstack([o.values for o in data])
    muhat = X.mean(axis=1)
    sighat = np.sqrt(np.mean((X - muhat[:, None]) ** 2, axis=1))
    return muhat, sighat


def fit_npmle_1d(muhat, variances, q: int, solver_cfg: Optional[SolverConfig] = None):
    """Univariate NPMLE for muhat_j ~ N(mu_j, variances_j); returns (L, fit, grid, posterior means)."""
    data = [KnownVarObs(m, v) for m, v in zip(muhat, variances)]
    grid = regular_grid(np.asarray(muhat)[:, None], GridSpec((q,)), names=("mu",))
    L = loglik_matrix(KernelId.GAUSSIAN_LOCATION, data, grid)
    fit = solve_em(L, solver_cfg)
    return L, fit, grid, posterior_mean(posterior_matrix(L, fit.weights), grid, 0)


def gls_grid(data, counts: Sequence[int], bounds_mode: str = "box") -> Grid:
    muhat, sighat = _summaries(data)
    return regular_grid(np.column_stack([muhat, sighat]), GridSpec(tuple(counts), bounds_mode),
                        names=("mu", "sigma"))


@dataclass
class StudyResult:
    records: list = field(default_factory=list)

    def cells(self):
        """{(estimator, grid_label): {metric: (mean, sd)}}."""
        keys = []
        for r in self.records:
            k = (r["estimator"], r["grid"])
            if k not in keys:
                keys.append(k)
        out = {}
        for k in keys:
            rows = [r for r in self.records if (r["estimator"], r["grid"]) == k]
            cell = {}
            for metric in ("tse", "delta_loglik", "seconds", "kkt_gap"):
                vals = [r[metric] for r in rows if r.get(metric) is not None]
                if vals:
                    cell[metric] = mean_sd(vals)
            cell["reps"] = len(rows)
            out[k] = cell
        return out

    def table_rows(self):
        rows = []
        for (est, grid), cell in self.cells().items():
            def fmt(metric, scale=1.0, digits=1):
                if metric not in cell:
                    return ""
                m, s = cell[metric]
                return f"{m * scale:.{digits}f} ({s * scale:.{digits}f})"
            rows.append({"estimator": est, "grid": grid, "tse": fmt("tse"),
                         "delta_loglik_x1e4": fmt("delta_loglik", 1e4, 0),
                         "seconds": fmt("seconds", 1.0, 2), "reps": cell["reps"]})
        for est in UNAVAILABLE:
            rows.append({"estimator": est, "grid": "", "tse": "unavailable",
                         "delta_loglik_x1e4": "", "seconds": "", "reps": 0})
        return rows


def run_replication(cfg: SimConfig, rep: int, estimators=ALL_ESTIMATORS, grids=((30, 30),),
                    solver_cfg: Optional[SolverConfig] = None, q1d: Optional[int] = None,
                    hook: Optional[Callable] = None) -> list:
    data, mu, sigma = simulate_gls(cfg, rep)
    muhat, sighat = _summaries(data)
    q1d = q1d or default_counts(1, cfg.p)[0]
    solver_cfg = solver_cfg or SolverConfig()
    out = []

    def record(name, grid_label, est, fit=None, seconds=None, delta=None):
        out.append({"rep": rep, "estimator": name, "grid": grid_label, "tse": tse(est, mu),
                    "delta_loglik": delta, "seconds": seconds,
                    "kkt_gap": None if fit is None else fit.kkt_gap,
                    "iterations": None if fit is None else fit.iterations,
                    "converged": None if fit is None else fit.converged,
                    "neg_log_lik": None if fit is None else fit.neg_log_lik})

    if "mle" in estimators:
        record("mle", "", muhat)
    if "soft_threshold" in estimators:
        t, _ = soft_threshold_oracle(muhat, mu)
        record("soft_threshold", "", soft_threshold(muhat, t))
    one_d = [("npmle_1d_plugin", sighat ** 2 / cfg.n)]
    if cfg.mixing_id == DIST1:
        one_d.append(("npmle_1d_known", sigma ** 2 / cfg.n))
    for name, var in one_d:
        if name not in estimators:
            continue
        t0 = time.perf_counter()
        L, fit, grid, est = fit_npmle_1d(muhat, var, q1d, solver_cfg)
        record(name, str(q1d), est, fit, time.perf_counter() - t0, 0.0)
        if hook:
            hook(rep, name, L, fit)
    for counts in grids:
        if not ({"npmle_2d_em", "npmle_2d_fw"} & set(estimators)):
            break
        label = "x".join(map(str, counts))
        grid = gls_grid(data, counts)
        L = loglik_matrix(KernelId.GAUSSIAN_LOCATION_SCALE, data, grid)
        t0 = time.perf_counter()
        em = solve_em(L, solver_cfg)
        t_em = time.perf_counter() - t0
        if "npmle_2d_em" in estimators:
            est = posterior_mean(posterior_matrix(L, em.weights), grid, 0)
            record("npmle_2d_em", label, est, em, t_em, 0.0)
            if hook:
                hook(rep, "npmle_2d_em:" + label, L, em)
        if "npmle_2d_fw" in estimators:
            t0 = time.perf_counter()
            fw = solve_frank_wolfe(L, solver_cfg)
            t_fw = time.perf_counter() - t0
            est = posterior_mean(posterior_matrix(L, fw.weights), grid, 0)
            record("npmle_2d_fw", label, est, fw, t_fw, delta_log_lik(fw, em))
            if hook:
                hook(rep, "npmle_2d_fw:" + label, L, fw)
    return out


def run_sim_study(cfg: SimConfig, estimators=ALL_ESTIMATORS, grids=((30, 30),),
                  solver_cfg: Optional[SolverConfig] = None, q1d: Optional[int] = None,
                  hook: Optional[Callable] = None) -> StudyResult:
    """Run ``cfg.reps`` replications; any failure aborts the study."""
    result = StudyResult()
    for rep in range(cfg.reps):
        try:
            result.records.extend(run_replication(cfg, rep, estimators, grids, solver_cfg, q1d, hook))
        except Exception as exc:
            raise RuntimeError(f"replication {rep} failed: {exc}") from exc
    return result
