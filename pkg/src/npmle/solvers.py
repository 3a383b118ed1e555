"""EM and Frank-Wolfe (vertex direction) solvers for the simplex program

    minimise  -(1/p) sum_j log( sum_k f_jk w_k )  over the simplex.

The stopping rule |l_K - l_{K-1}| / |l_{K-1}| <= tol is applied to the
row-shifted objective, i.e. the mean log ratio of the mixture density to
each observation's best single-atom density.  That scale does not depend
on theta-free constants a kernel may drop; traces and results report the
absolute objective.

Both iterate in linear space on ``L.dense`` (row-shifted likelihoods in
[0, 1]); EM drops to log space for any iteration whose mixture densities
come close to underflow.  Final diagnostics are always recomputed in log
space by :mod:`npmle.core`.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass
from typing import Optional, TextIO

import numpy as np

from .core import (FLUSH, FitResult, Incompatible, InvariantViolation, LogLikelihoodMatrix, NonFinite,
                   SIMPLEX_TOL, check_weights, kkt_gap, neg_log_likelihood, _row_lse)

EM = "EM"
FRANK_WOLFE = "FrankWolfe"
DEFAULT_MAX_ITER = {EM: 50_000, FRANK_WOLFE: 20_000}
MONOTONE_SLACK = 1e-12
_TINY = 1e-280


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iter: Optional[int] = None
    init: object = "uniform"
    trace: bool = False
    trace_stream: Optional[TextIO] = None
    away_steps: bool = False   # Frank-Wolfe only

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError("tol must lie in (0, 1)")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def initial_weights(self, q: int) -> np.ndarray:
        if isinstance(self.init, str):
            if self.init != "uniform":
                raise ValueError(f"unknown init {self.init!r}")
            return np.full(q, 1.0 / q)
        return check_weights(np.array(self.init, dtype=float), q).copy()


def _rel_change(new: float, old: float) -> float:
    if old == 0:
        return abs(new - old)
    return abs(new - old) / abs(old)


class _Tracer:
    def __init__(self, cfg: SolverConfig):
        self.on = cfg.trace
        self.stream = cfg.trace_stream if cfg.trace_stream is not None else sys.stderr
        self.rows = []
        if self.on:
            self.stream.write("iteration,objective,kkt_gap\n")

    def __call__(self, it, obj, gap):
        if self.on:
            self.rows.append((it, obj, gap))
            self.stream.write(f"{it},{float(obj)!r},{float(gap)!r}\n")


def _check_simplex(w, solver, it):
    if np.any(w < 0) or abs(w.sum() - 1.0) > SIMPLEX_TOL or not np.all(np.isfinite(w)):
        raise InvariantViolation(f"{solver} iterate {it} left the simplex (sum={w.sum()!r})")


def _em_quantities(L: LogLikelihoodMatrix, w: np.ndarray):
    """Objective and likelihood ratios c_k at w."""
    F = L.dense
    d = F @ w
    if np.all(d > _TINY):
        return -np.mean(np.log(d)), (1.0 / d) @ F / L.p
    pos = w > 0
    logd = _row_lse(L.entries[:, pos] + np.log(w[pos]))
    if not np.all(np.isfinite(logd)):
        raise NonFinite("mixture density vanished for some row")
    return -np.mean(logd), np.exp(L.entries - logd[:, None]).sum(axis=0) / L.p


def _finish(L, w, it, converged, solver, tracer):
    return FitResult(weights=w, neg_log_lik=neg_log_likelihood(L, w), iterations=it,
                     kkt_gap=kkt_gap(L, w), converged=converged, solver_id=solver,
                     trace=tracer.rows)


def solve_em(L: LogLikelihoodMatrix, cfg: Optional[SolverConfig] = None) -> FitResult:
    """Multiplicative EM update w_k <- w_k c_k, renormalised every step.

    Zero weights stay zero, so custom starting points should be strictly
    positive on every atom that must remain reachable.
    """
    cfg = cfg or SolverConfig()
    max_iter = cfg.max_iter or DEFAULT_MAX_ITER[EM]
    tracer = _Tracer(cfg)
    w = cfg.initial_weights(L.q)
    if L.q == 1:
        return _finish(L, w, 0, True, EM, tracer)
    base = -float(np.mean(L.row_shifts))
    obj, c = _em_quantities(L, w)
    tracer(0, obj + base, c.max() - 1.0)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        w_new = w * c
        w_new[w_new < FLUSH] = 0.0
        w_new /= w_new.sum()
        obj_new, c = _em_quantities(L, w_new)
        if not np.isfinite(obj_new) or not np.all(np.isfinite(w_new)):
            raise NonFinite(f"EM produced a non-finite iterate at iteration {it}")
        _check_simplex(w_new, EM, it)
        # slack relative to the objective on either scale; the shifted one can sit at ~0
        if obj_new > obj + MONOTONE_SLACK * max(abs(obj), abs(obj + base), 1.0):
            raise InvariantViolation(f"EM objective increased at iteration {it}: {obj!r} -> {obj_new!r}")
        gap = c.max() - 1.0
        tracer(it, obj_new + base, gap)
        rel = _rel_change(obj_new, obj)
        w, obj = w_new, obj_new
        if rel <= cfg.tol or gap <= cfg.tol * 1e-2:
            converged = True
            break
    return _finish(L, w, it, converged, EM, tracer)


def line_search(d, diff, hi: float = 1.0, xtol: float = 1e-13) -> float:
    """Minimiser over [0, hi] of phi(g) = -mean log(d + g diff).

    phi is convex, so this is a safeguarded Newton iteration on phi'
    inside a shrinking bracket (bisection whenever Newton leaves it).
    """
    d = np.asarray(d, dtype=float)
    diff = np.asarray(diff, dtype=float)

    def slope(g):
        den = d + g * diff
        if np.any(den <= 0):
            return np.inf
        return -np.mean(diff / den)

    if slope(0.0) >= 0:
        return 0.0
    if slope(hi) <= 0:
        return hi
    a, b = 0.0, hi
    x = 0.5 * hi
    for _ in range(200):
        r = diff / (d + x * diff)
        g = -np.mean(r)
        if g == 0:
            return x
        if g > 0:
            b = x
        else:
            a = x
        h = np.mean(r * r)
        xn = x - g / h if h > 0 else 0.5 * (a + b)
        if not a < xn < b:
            xn = 0.5 * (a + b)
        if abs(xn - x) <= xtol or b - a <= xtol:
            return xn
        x = xn
    return x


def solve_frank_wolfe(L: LogLikelihoodMatrix, cfg: Optional[SolverConfig] = None) -> FitResult:
    """Vertex direction method with exact line search along e_k - w.

    With ``cfg.away_steps`` the method may instead move mass away from the
    worst support atom (direction w - e_a) whenever that promises more
    descent; this converges linearly where the plain method zig-zags.
    """
    cfg = cfg or SolverConfig()
    max_iter = cfg.max_iter or DEFAULT_MAX_ITER[FRANK_WOLFE]
    tracer = _Tracer(cfg)
    w = cfg.initial_weights(L.q)
    if L.q == 1:
        return _finish(L, w, 0, True, FRANK_WOLFE, tracer)
    F = L.dense
    d = F @ w
    with np.errstate(divide="ignore"):
        obj = -np.mean(np.log(d))
    if not np.isfinite(obj):
        return _finish(L, w, 0, False, FRANK_WOLFE, tracer)  # raises DegenerateRow
    base = -float(np.mean(L.row_shifts))
    converged = False
    it = 0
    while True:
        c = (1.0 / d) @ F / L.p
        gap = c.max() - 1.0
        tracer(it, obj + base, gap)
        if gap <= cfg.tol * 1e-2:
            converged = True
            break
        if it >= max_iter:
            break
        it += 1
        k = int(np.argmax(c))  # argmin of the gradient, lowest index on ties
        away = False
        if cfg.away_steps:
            supp = np.flatnonzero(w > 0)
            a = int(supp[np.argmin(c[supp])])
            # descent rates along e_k - w and w - e_a are c_k - 1 and 1 - c_a
            away = 1.0 - c[a] > gap and w[a] < 1.0
        if away:
            diff = d - F[:, a]
            hi = w[a] / (1.0 - w[a])
        else:
            diff = F[:, k] - d
            hi = 1.0

        def phi(g):
            with np.errstate(divide="ignore", invalid="ignore"):
                val = -np.mean(np.log(d + g * diff))
            return val if np.isfinite(val) else np.inf

        gamma = line_search(d, diff, hi)
        if away and phi(hi) <= phi(gamma):
            gamma = hi
        obj_new = phi(gamma)
        if not obj_new <= obj:
            gamma, obj_new = 0.0, obj
        dropped = away and gamma == hi
        if away:
            w_new = (1.0 + gamma) * w
            w_new[a] -= gamma
            if dropped:
                w_new[a] = 0.0
        else:
            w_new = (1.0 - gamma) * w
            w_new[k] += gamma
        w_new[w_new < FLUSH] = 0.0
        w_new /= w_new.sum()
        _check_simplex(w_new, FRANK_WOLFE, it)
        d = F @ w_new
        obj_new = -np.mean(np.log(d))
        if not np.isfinite(obj_new):
            raise NonFinite(f"Frank-Wolfe produced a non-finite objective at iteration {it}")
        rel = _rel_change(obj_new, obj)
        w, obj = w_new, obj_new
        # a drop step only removes an atom and may barely move the objective
        if rel <= cfg.tol and not dropped:
            converged = True
            break
    return _finish(L, w, it, converged, FRANK_WOLFE, tracer)


SOLVERS = {"em": solve_em, "fw": solve_frank_wolfe, EM: solve_em, FRANK_WOLFE: solve_frank_wolfe}


def solve(L: LogLikelihoodMatrix, solver: str = "em", cfg: Optional[SolverConfig] = None) -> FitResult:
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}") from None
    return fn(L, cfg)


def delta_log_lik(result: FitResult, baseline: FitResult) -> float:
    """baseline.neg_log_lik - result.neg_log_lik; positive favours ``result``."""
    if len(result.weights) != len(baseline.weights):
        raise Incompatible("fits were computed on grids of different size")
    return float(baseline.neg_log_lik - result.neg_log_lik)
