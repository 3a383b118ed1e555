"""Predicting fingerstick glucose (FS) from the sensor current (ISIG).

Two per-subject models are supported:

* ``LM``: FS = mu + beta ISIG + sigma eps, atoms (mu, beta, log sigma);
* ``SS``: the local level model FS_i = alpha_i ISIG_i + sigma eps_i with a
  random-walk alpha, atoms (log tau, log sigma).

Each subject's series is split in half.  The first half fits the model in
one of three modes (pooled parameters, per-subject MLEs, or an NPMLE
mixing distribution over subjects); the second half is predicted one
point at a time from everything observed before it.
"""
from __future__ import annotations

import csv
import math
import warnings
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..grid import GridSpec, regular_grid
from ..kernels import (InsufficientSeries, KernelId, RegressionObs, SeriesObs, _kalman, lm_predict,
                       loglik_matrix, mle, ss_mle_pooled)
from ..posterior import posterior_matrix, posterior_mean
from ..solvers import SolverConfig, solve_em

CSV_HEADER = ["subject_id", "timestamp", "fs", "isig", "cgm"]
LM, SS = "LM", "SS"
COMBINED, INDIVIDUAL, NPMLE = "Combined", "Individual", "NPMLE"
MODES = (COMBINED, INDIVIDUAL, NPMLE)
MIN_TRAIN = {LM: 4, SS: 3}
MIN_TEST = 1


@dataclass
class Subject:
    subject_id: str
    train: SeriesObs
    test: SeriesObs
    cgm: Optional[np.ndarray] = None   # baseline predictions on the test half


def _float_or_none(text):
    text = (text or "").strip()
    return None if text == "" else float(text)


def read_glucose_csv(path) -> list:
    """Group rows by subject, keep rows with both FS and ISIG, split in half.

    The first ceil(n/2) points (in timestamp order) form the training half.
    """
    rows = OrderedDict()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != CSV_HEADER:
            raise ValueError(f"{path}:1: expected header {','.join(CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                ts = float(row["timestamp"])
                fs = _float_or_none(row["fs"])
                isig = _float_or_none(row["isig"])
                cgm = _float_or_none(row["cgm"])
            except (ValueError, TypeError, AttributeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if fs is None or isig is None:
                continue
            if isig == 0:
                raise ValueError(f"{path}:{lineno}: isig must be nonzero")
            rows.setdefault(row["subject_id"].strip(), []).append((ts, fs, isig, cgm))
    return [split_subject(sid, recs) for sid, recs in rows.items()]


def split_subject(subject_id, records) -> Subject:
    """records: iterable of (timestamp, fs, isig, cgm-or-None)."""
    recs = sorted(records, key=lambda r: r[0])
    ts = np.array([r[0] for r in recs], dtype=float)
    fs = np.array([r[1] for r in recs], dtype=float)
    isig = np.array([r[2] for r in recs], dtype=float)
    cg = [r[3] for r in recs]
    h = math.ceil(len(recs) / 2)
    test_cgm = cg[h:]
    cgm = None if any(c is None for c in test_cgm) or not test_cgm else np.array(test_cgm, dtype=float)
    return Subject(str(subject_id), SeriesObs(fs[:h], isig[:h], ts[:h]), SeriesObs(fs[h:], isig[h:], ts[h:]), cgm)


def write_glucose_csv(path, subjects: Sequence[Subject]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in subjects:
            for part, cg in ((s.train, None), (s.test, s.cgm)):
                ts = part.timestamps if part.timestamps is not None else np.arange(len(part))
                for i in range(len(part)):
                    c = "" if cg is None else repr(float(cg[i]))
                    w.writerow([s.subject_id, repr(float(ts[i])), repr(float(part.responses[i])),
                                repr(float(part.covariates[i])), c])


# ---------------------------------------------------------------------------
# prediction


def ss_predictions(subject: Subject, atoms, post=None) -> np.ndarray:
    """One-step-ahead FS predictions over the test half.

    ``atoms`` is K x 2 (log tau, log sigma).  The state estimate at test
    point t uses every FS before t; with several atoms the filtered means
    are averaged under ``post`` (the subject's posterior over atoms given
    the training half, frozen during the test half).
    """
    atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
    y = np.concatenate([subject.train.responses, subject.test.responses])
    x = np.concatenate([subject.train.covariates, subject.test.covariates])
    _, means, _ = _kalman(y, x, atoms[:, 0], atoms[:, 1])
    h = len(subject.train)
    prior_means = means[h - 1:-1]          # E(alpha_t | data before t), K columns
    if post is None:
        if atoms.shape[0] != 1:
            raise ValueError("posterior weights are required for more than one atom")
        alpha = prior_means[:, 0]
    else:
        alpha = prior_means @ np.asarray(post, dtype=float)
    return alpha * x[h:]


def _regression(s: SeriesObs) -> RegressionObs:
    return RegressionObs(s.responses, s.covariates)


def _pooled_ols(subjects):
    y = np.concatenate([s.train.responses for s in subjects])
    x = np.concatenate([s.train.covariates for s in subjects])
    return mle(KernelId.LINEAR_REGRESSION, RegressionObs(y, x))


@dataclass
class GlucoseResult:
    model: str
    mode: str
    subject_ids: list
    mse: float                      # pooled over all test points
    baseline_mse: Optional[float]
    relative_mse: Optional[float]
    per_subject_mse: np.ndarray = field(repr=False, default=None)
    predictions: list = field(repr=False, default_factory=list)
    fit: object = field(repr=False, default=None)
    grid: object = field(repr=False, default=None)
    params: object = field(repr=False, default=None)


def usable_subjects(subjects: Sequence[Subject], model: str) -> list:
    keep = []
    for s in subjects:
        if len(s.train) < MIN_TRAIN[model] or len(s.test) < MIN_TEST:
            warnings.warn(f"subject {s.subject_id}: insufficient series "
                          f"({len(s.train)} train / {len(s.test)} test points); excluded", stacklevel=3)
            continue
        keep.append(s)
    if not keep:
        raise InsufficientSeries("no subject has enough data")
    return keep


def glucose_pipeline(subjects: Sequence[Subject], model: str = SS, mode: str = NPMLE,
                     counts: Optional[Sequence[int]] = None, explicit_bounds=None,
                     solver_cfg: Optional[SolverConfig] = None) -> GlucoseResult:
    """Fit on the training halves and score predictions of the test halves."""
    model = model.upper()
    if model not in (LM, SS):
        raise ValueError(f"model must be {LM} or {SS}")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    subjects = usable_subjects(subjects, model)
    fit = grid = None
    preds = []
    if model == SS:
        if mode == COMBINED:
            params = ss_mle_pooled([s.train for s in subjects])
            preds = [ss_predictions(s, params) for s in subjects]
        elif mode == INDIVIDUAL:
            params = np.vstack([mle(KernelId.LOCAL_LEVEL_SS, s.train) for s in subjects])
            preds = [ss_predictions(s, p) for s, p in zip(subjects, params)]
        else:
            params = np.vstack([mle(KernelId.LOCAL_LEVEL_SS, s.train) for s in subjects])
            spec = GridSpec(tuple(counts or (30, 30)), explicit_bounds=explicit_bounds)
            grid = regular_grid(params, spec, names=KernelId.LOCAL_LEVEL_SS.coord_names)
            L = loglik_matrix(KernelId.LOCAL_LEVEL_SS, [s.train for s in subjects], grid)
            fit = solve_em(L, solver_cfg)
            post = posterior_matrix(L, fit.weights)
            preds = [ss_predictions(s, grid.atoms, post[j]) for j, s in enumerate(subjects)]
    else:
        if mode == COMBINED:
            params = _pooled_ols(subjects)
            preds = [lm_predict(params, s.test.covariates) for s in subjects]
        elif mode == INDIVIDUAL:
            params = np.vstack([mle(KernelId.LINEAR_REGRESSION, _regression(s.train)) for s in subjects])
            preds = [lm_predict(p, s.test.covariates) for s, p in zip(subjects, params)]
        else:
            data = [_regression(s.train) for s in subjects]
            params = np.vstack([mle(KernelId.LINEAR_REGRESSION, o) for o in data])
            spec = GridSpec(tuple(counts or (30, 30, 30)), explicit_bounds=explicit_bounds)
            grid = regular_grid(params, spec, names=KernelId.LINEAR_REGRESSION.coord_names)
            L = loglik_matrix(KernelId.LINEAR_REGRESSION, data, grid)
            fit = solve_em(L, solver_cfg)
            post = posterior_matrix(L, fit.weights)
            mu = posterior_mean(post, grid, 0)
            beta = posterior_mean(post, grid, 1)
            preds = [lm_predict((mu[j], beta[j]), s.test.covariates) for j, s in enumerate(subjects)]
    sq = [(p - s.test.responses) ** 2 for p, s in zip(preds, subjects)]
    mse = float(np.mean(np.concatenate(sq)))
    base = None
    if all(s.cgm is not None for s in subjects):
        base = float(np.mean(np.concatenate([(s.cgm - s.test.responses) ** 2 for s in subjects])))
    return GlucoseResult(model, mode, [s.subject_id for s in subjects], mse, base,
                         None if base is None else mse / base,
                         np.array([np.mean(e) for e in sq]), preds, fit, grid, params)


# ---------------------------------------------------------------------------
# synthetic subjects


def synthetic_subjects(seed: int, n_subjects: int = 60, n_points: int = 40,
                       atoms=((math.log(0.01), math.log(10.0)), (math.log(0.4), math.log(3.0))),
                       probs=(0.5, 0.5), cgm_sd: float = 15.0) -> list:
    """Local level subjects drawn from a known two-atom (log tau, log sigma) mixture.

    ISIG ~ U(15, 45), alpha_1 ~ N(5, 1); CGM is FS plus N(0, cgm_sd^2) noise.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    atoms = np.asarray(atoms, dtype=float)
    out = []
    for j in range(n_subjects):
        k = rng.choice(len(atoms), p=probs)
        tau, sig = np.exp(atoms[k])
        isig = rng.uniform(15.0, 45.0, n_points)
        alpha = 5.0 + rng.standard_normal() + np.concatenate([[0.0], np.cumsum(tau * rng.standard_normal(n_points - 1))])
        fs = alpha * isig + sig * rng.standard_normal(n_points)
        cgm = fs + cgm_sd * rng.standard_normal(n_points)
        ts = np.arange(n_points, dtype=float) * 5.0
        out.append(split_subject(f"s{j:03d}", [(ts[i], fs[i], isig[i], cgm[i]) for i in range(n_points)]))
    return out
