import numpy as np


def tse(estimates, truth) -> float:
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError("estimates and truth differ in length")
    return float(np.sum((estimates - truth) ** 2))


def soft_threshold(x, t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def soft_threshold_oracle(muhat, truth, steps: int = 1000):
    """Threshold minimising TSE over t in {0, h, ..., max|muhat|}, h = max|muhat|/steps."""
    muhat = np.asarray(muhat, dtype=float)
    tmax = float(np.max(np.abs(muhat)))
    ts = np.linspace(0.0, tmax, steps + 1) if tmax > 0 else np.zeros(1)
    errs = [tse(soft_threshold(muhat, t), truth) for t in ts]
    k = int(np.argmin(errs))
    return float(ts[k]), float(errs[k])


def arcsin_transform(hits, at_bats):
    """W = arcsin sqrt((H + 1/4) / (A + 1/2))."""
    hits = np.asarray(hits, dtype=float)
    at_bats = np.asarray(at_bats, dtype=float)
    return np.arcsin(np.sqrt((hits + 0.25) / (at_bats + 0.5)))


def baseball_tse(estimates_mu, hits2, at_bats2) -> float:
    """sum_j (mu_j - W~_j)^2 - 1/(4 A~_j) on second-half counts; may be negative."""
    at_bats2 = np.asarray(at_bats2, dtype=float)
    w2 = arcsin_transform(hits2, at_bats2)
    return float(np.sum((np.asarray(estimates_mu, dtype=float) - w2) ** 2 - 1.0 / (4.0 * at_bats2)))


def mean_sd(values):
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0
