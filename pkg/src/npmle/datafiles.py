"""CSV readers for kernel observations and log-likelihood matrices.

Layouts (one header line, ``id`` is any string):

==========================  =============================================
gaussian-location           id,variance,value[,value_2,...]
gaussian-location-scale     id,value              (one row per replicate)
poisson-binomial            id,at_bats,hits
two-class-gaussian          id,label,value        (one row per subject)
linear-regression           id,response,covariate (one row per point)
local-level-ss              id,timestamp,response,covariate
loglik-matrix               k0,k1,...             (raw log densities; -inf ok)
==========================  =============================================

Long layouts group rows by id in order of first appearance.  Every error
names the file and line.
"""
from __future__ import annotations

import csv
from collections import OrderedDict

import numpy as np

from .kernels import (CountPairObs, KernelId, KnownVarObs, RegressionObs, ReplicateObs, SeriesObs,
                      TwoClassObs, as_kernel)

LOGLIK_MATRIX = "loglik-matrix"

HEADERS = {
    KernelId.GAUSSIAN_LOCATION: ["id", "variance", "value"],
    KernelId.GAUSSIAN_LOCATION_SCALE: ["id", "value"],
    KernelId.POISSON_BINOMIAL: ["id", "at_bats", "hits"],
    KernelId.TWO_CLASS_GAUSSIAN: ["id", "label", "value"],
    KernelId.LINEAR_REGRESSION: ["id", "response", "covariate"],
    KernelId.LOCAL_LEVEL_SS: ["id", "timestamp", "response", "covariate"],
}


class SchemaError(ValueError):
    pass


def _rows(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}:1: empty file")
        header = [h.strip() for h in header]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(c.strip() == "" for c in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield header, lineno, [c.strip() for c in row]


def _num(path, lineno, text, cast=float):
    try:
        return cast(text)
    except ValueError:
        raise SchemaError(f"{path}:{lineno}: cannot parse {text!r} as {cast.__name__}") from None


def _check_header(path, header, expected, extra_values=False):
    ok = header[:len(expected)] == expected and (
        len(header) == len(expected) or (extra_values and all(h.startswith("value") for h in header[2:])))
    if not ok:
        raise SchemaError(f"{path}:1: expected header {','.join(expected)}, got {','.join(header)}")


def read_observations(kernel, path):
    """Returns (ids, observations) for ``kernel``."""
    kernel = as_kernel(kernel)
    expected = HEADERS[kernel]
    ids, obs = [], []
    groups = OrderedDict()
    first = True
    for header, lineno, row in _rows(path):
        if first:
            _check_header(path, header, expected, kernel is KernelId.GAUSSIAN_LOCATION)
            first = False
        try:
            if kernel is KernelId.GAUSSIAN_LOCATION:
                var = _num(path, lineno, row[1])
                vals = np.array([_num(path, lineno, v) for v in row[2:]])
                ids.append(row[0])
                obs.append(KnownVarObs(vals, var))
            elif kernel is KernelId.POISSON_BINOMIAL:
                ids.append(row[0])
                obs.append(CountPairObs(_num(path, lineno, row[1], int), _num(path, lineno, row[2], int)))
            else:
                groups.setdefault(row[0], []).append([_num(path, lineno, v) for v in row[1:]])
        except SchemaError:
            raise
        except ValueError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    if first:
        raise SchemaError(f"{path}:1: no header")
    for key, recs in groups.items():
        a = np.array(recs, dtype=float)
        try:
            if kernel is KernelId.GAUSSIAN_LOCATION_SCALE:
                o = ReplicateObs(a[:, 0])
            elif kernel is KernelId.TWO_CLASS_GAUSSIAN:
                o = TwoClassObs(a[:, 1], a[:, 0].astype(int))
            elif kernel is KernelId.LINEAR_REGRESSION:
                o = RegressionObs(a[:, 0], a[:, 1])
            else:
                a = a[np.argsort(a[:, 0], kind="stable")]
                o = SeriesObs(a[:, 1], a[:, 2], a[:, 0])
        except ValueError as exc:
            raise SchemaError(f"{path}: id {key!r}: {exc}") from None
        ids.append(key)
        obs.append(o)
    if not obs:
        raise SchemaError(f"{path}: no observations")
    return ids, obs


def read_loglik_matrix(path) -> np.ndarray:
    """Rows of raw log densities; 'inf' and '-inf' parse as floats."""
    rows = []
    for _, lineno, row in _rows(path):
        vals = [_num(path, lineno, v) for v in row]
        if any(np.isnan(v) or v == np.inf for v in vals):
            raise SchemaError(f"{path}:{lineno}: log densities must be finite or -inf")
        rows.append(vals)
    if not rows:
        raise SchemaError(f"{path}: no rows")
    return np.array(rows, dtype=float)


def write_observations(kernel, path, ids, obs):
    kernel = as_kernel(kernel)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if kernel is KernelId.GAUSSIAN_LOCATION:
            d = len(obs[0].value)
            w.writerow(["id", "variance", "value"] + [f"value_{i + 1}" for i in range(1, d)])
            for i, o in zip(ids, obs):
                w.writerow([i, repr(float(o.variance))] + [repr(float(v)) for v in o.value])
            return
        w.writerow(HEADERS[kernel])
        for i, o in zip(ids, obs):
            if kernel is KernelId.POISSON_BINOMIAL:
                w.writerow([i, o.at_bats, o.hits])
            elif kernel is KernelId.GAUSSIAN_LOCATION_SCALE:
                for v in o.values:
                    w.writerow([i, repr(float(v))])
            elif kernel is KernelId.TWO_CLASS_GAUSSIAN:
                for lab, v in zip(o.labels, o.values):
                    w.writerow([i, int(lab), repr(float(v))])
            elif kernel is KernelId.LINEAR_REGRESSION:
                for y, x in zip(o.responses, o.covariates):
                    w.writerow([i, repr(float(y)), repr(float(x))])
            else:
                ts = o.timestamps if o.timestamps is not None else np.arange(len(o))
                for t, y, x in zip(ts, o.responses, o.covariates):
                    w.writerow([i, repr(float(t)), repr(float(y)), repr(float(x))])
