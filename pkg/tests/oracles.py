"""Brute-force reference implementations used only by the tests.

Every oracle evaluates a membership test on a dense grid with cold refits
and scipy.stats distributions, independent of the package's warm starts,
closed-form shortcuts, vectorized kernels and grid-then-bisect search.
"""

import math

import numpy as np
from scipy import stats
from scipy.optimize import brentq, minimize_scalar
from scipy.integrate import quad

from glmconformal.glm import FitError, expand_design, fit_mle


def runs(grid, accepted):
    """(first, last) grid value of every maximal accepted run."""
    acc = np.asarray(accepted, dtype=bool)
    edges = np.diff(np.concatenate(([0], acc.astype(np.int8), [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1) - 1
    return [(grid[s], grid[e]) for s, e in zip(starts, stops)]


def cold_fit(spec, xs, y):
    design = expand_design(xs, spec)
    if spec.family == "gaussian":
        beta = np.linalg.lstsq(design.features, y, rcond=None)[0]
        r = y - design.features @ beta
        return beta, float(r @ r) / len(y), design.features
    model = fit_mle(spec, design, y)
    if not model.converged:
        raise FitError("no convergence")
    return model.beta, model.dispersion, design.features


def _mean(spec, eta):
    if spec.link == "identity":
        return eta
    if spec.link == "inverse":
        return 1.0 / eta
    return np.exp(eta)


class _Dist:
    # unfrozen scipy.stats calls; frozen objects are slow to construct in loops
    def __init__(self, family, args, kwargs):
        self.family, self.args, self.kwargs = family, args, kwargs

    def logpdf(self, v):
        return self.family.logpdf(v, *self.args, **self.kwargs)

    def cdf(self, v):
        return self.family.cdf(v, *self.args, **self.kwargs)

    def ppf(self, p):
        return self.family.ppf(p, *self.args, **self.kwargs)


def dist(spec, mu, disp):
    if spec.family == "gaussian":
        return _Dist(stats.norm, (), {"loc": mu, "scale": math.sqrt(disp)})
    return _Dist(stats.gamma, (disp,), {"scale": np.asarray(mu) / disp})


def augmented(spec, data, x, y):
    xs = np.vstack([data.xs, np.atleast_2d(np.asarray(x, dtype=float))])
    beta, disp, F = cold_fit(spec, xs, np.append(data.y, y))
    mu = _mean(spec, F @ beta)
    if np.any(~np.isfinite(mu)) or (spec.family == "gamma" and np.any(mu <= 0)):
        raise FitError("infeasible mean")
    return mu, disp


def binned_oracle(data, spec, partition, x, alpha, grid):
    k = partition.assign(np.atleast_2d(x))[0]
    rows = np.flatnonzero(partition.assign(data.xs) == k)
    need = math.floor((len(rows) + 1) * alpha + 1e-9)
    acc = np.zeros(len(grid), dtype=bool)
    for g, y in enumerate(grid):
        try:
            mu, disp = augmented(spec, data, x, y)
        except (FitError, ValueError, np.linalg.LinAlgError):
            continue
        lp = dist(spec, mu[rows], disp).logpdf(data.y[rows])
        lp_new = dist(spec, mu[-1], disp).logpdf(y)
        acc[g] = 1 + np.sum(lp <= lp_new) >= need
    return runs(grid, acc)


def hd_interval_oracle(spec, mu, disp, alpha):
    """Shortest 1 - alpha interval by minimizing over the lower tail mass."""
    d = dist(spec, mu, disp)
    if spec.family == "gaussian":
        return d.ppf(alpha / 2), d.ppf(1 - alpha / 2)
    if disp <= 1:
        return 0.0, d.ppf(1 - alpha)
    res = minimize_scalar(lambda p: d.ppf(p + 1 - alpha) - d.ppf(p), bounds=(0.0, alpha),
                          method="bounded", options={"xatol": 1e-12})
    return d.ppf(res.x), d.ppf(res.x + 1 - alpha)


def transform_oracle(data, spec, x, alpha, grid):
    n = data.n
    acc = np.zeros(len(grid), dtype=bool)
    for g, y in enumerate(grid):
        try:
            mu, disp = augmented(spec, data, x, y)
        except (FitError, ValueError, np.linalg.LinAlgError):
            continue
        u = np.sort(dist(spec, mu[:-1], disp).cdf(data.y))
        d_new = dist(spec, mu[-1], disp)
        a, b = hd_interval_oracle(spec, mu[-1], disp, alpha)
        j_lo = math.floor((n + 1) * d_new.cdf(a) + 1e-9)
        j_hi = min(math.ceil((n + 1) * d_new.cdf(b) - 1e-9), n)
        lower = u[j_lo - 1] if j_lo >= 1 else 0.0
        upper = u[j_hi - 1]
        acc[g] = lower <= d_new.cdf(y) <= upper
    return runs(grid, acc)


def kernel_oracle(yk, h, alpha, grid):
    n_k = len(yk)
    K = stats.norm.pdf

    yk = np.asarray(yk, dtype=float)

    def p_tilde(v, y):
        base = np.sum(K((np.atleast_1d(v)[:, None] - yk[None, :]) / h), axis=1) / (n_k * h)
        return n_k / (n_k + 1) * base + K((v - y) / h) / ((n_k + 1) * h)

    acc = np.zeros(len(grid), dtype=bool)
    for g, y in enumerate(grid):
        p_new = p_tilde(y, y)[0]
        rank = (1 + np.sum(p_tilde(yk, y) <= p_new)) / (n_k + 1)
        acc[g] = rank >= alpha
    return runs(grid, acc)


def level_scan_hd(pdf, mode, alpha, hi, step=1e-5):
    """Highest-density interval by scanning density levels and integrating.

    A coarse scan brackets the level whose superlevel set holds 1 - alpha,
    then a scan with spacing ``step`` inside the bracket picks the closest.
    """
    top = pdf(mode)

    def interval(t):
        a = brentq(lambda v: pdf(v) - t, 0.0, mode) if pdf(0.0) < t else 0.0
        b = brentq(lambda v: pdf(v) - t, mode, hi)
        return a, b

    def mass(t):
        a, b = interval(t)
        return quad(pdf, a, b, epsabs=1e-13, epsrel=1e-13, limit=200)[0]

    levels = np.arange(1e-3, top, 1e-3)
    masses = np.array([mass(t) for t in levels])
    i = int(np.argmin(np.abs(masses - (1 - alpha))))
    fine = np.arange(levels[max(i - 1, 0)], levels[min(i + 1, len(levels) - 1)] + step, step)
    best = min(fine, key=lambda t: abs(mass(t) - (1 - alpha)))
    return interval(best)


def compare(region, oracle, tol):
    """Piece counts agree and every boundary is within ``tol``."""
    if len(region.pieces) != len(oracle):
        return False
    return all(abs(a - oa) < tol and abs(b - ob) < tol
               for (a, b), (oa, ob) in zip(region.pieces, oracle))
