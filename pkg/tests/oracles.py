"""Independent reference computations used by several test files."""
import numpy as np
from scipy.stats import multivariate_normal


def dense_ss(y, x, tau, sigma):
    """Conditional log-likelihood of y[1:] given y[0] and E(alpha_i | y[:i+1]).

    Built from the explicit joint Gaussian law: given y[0] the initial state
    is N(y0/x0, sigma^2/x0^2), alpha_i adds i independent N(0, tau^2) steps,
    and y_i = x_i alpha_i + sigma eps_i.
    """
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    n = len(y)
    v0 = sigma ** 2 / x[0] ** 2
    m0 = y[0] / x[0]
    idx = np.arange(n)
    # state covariance C[i, k] = v0 + tau^2 min(i, k)
    C = v0 + tau ** 2 * np.minimum.outer(idx, idx)
    Sy = np.outer(x, x) * C + sigma ** 2 * np.eye(n)
    my = x * m0
    ll = multivariate_normal(my[1:], Sy[1:, 1:]).logpdf(y[1:]) if n > 1 else 0.0
    means = [m0]
    for i in range(1, n):
        S = Sy[1:i + 1, 1:i + 1]
        cross = C[i, 1:i + 1] * x[1:i + 1]
        means.append(m0 + cross @ np.linalg.solve(S, y[1:i + 1] - my[1:i + 1]))
    return float(ll), np.array(means)


def brute_force_q2(L_raw, step=1e-5):
    """min over w1 in [0, 1] (grid of ``step``) of -mean log(f1 w1 + f2 (1 - w1))."""
    F = np.exp(np.asarray(L_raw, float))
    w1 = np.linspace(0.0, 1.0, int(round(1 / step)) + 1)
    with np.errstate(divide="ignore"):
        vals = -np.mean(np.log(np.outer(F[:, 0], w1) + np.outer(F[:, 1], 1 - w1)), axis=0)
    k = int(np.argmin(vals))
    return float(vals[k]), float(w1[k])
