"""Binned and transformation parametric conformal regions, plus the HD region."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, ndtri

from .engine import (
    ConformalConfig,
    IntervalUnion,
    ceil_tol,
    floor_tol,
    region_from_acceptance,
    with_warnings,
)
from .glm import (
    AugmentedFitter,
    Dataset,
    FittedModel,
    ModelSpec,
    cdf_array,
    expand_row,
    inverse_link,
    logpdf,
)
from .special import regularized_lower_gamma, regularized_lower_gamma_array

# candidates per vectorized acceptance batch; bounds the (batch x n) work arrays
BATCH = 2048


class EmptyBinError(ValueError):
    """Raised when a query point falls in a bin without training rows."""


def default_bins(n: int) -> int:
    return 2 if n < 250 else 3


@dataclass(frozen=True)
class BinPartition:
    """Equal-width axis-aligned partition of ``[lo, hi]``.

    ``axes`` restricts the partition to a subset of main effects, e.g. a
    single binary factor column; other coordinates are ignored.
    """

    d: int
    bins_per_dim: int
    lo: tuple | None = None
    hi: tuple | None = None
    axes: tuple | None = None

    def __post_init__(self):
        if self.bins_per_dim < 1:
            raise ValueError("bins_per_dim must be positive")
        lo = tuple(float(v) for v in (self.lo if self.lo is not None else [0.0] * self.d))
        hi = tuple(float(v) for v in (self.hi if self.hi is not None else [1.0] * self.d))
        axes = tuple(int(a) for a in (self.axes if self.axes is not None else range(self.d)))
        if len(lo) != self.d or len(hi) != self.d:
            raise ValueError("lo and hi must have length d")
        if any(not a < b for a, b in zip(lo, hi)):
            raise ValueError("lo must be strictly below hi on every axis")
        if any(not 0 <= a < self.d for a in axes):
            raise ValueError("partition axes out of range")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "axes", axes)

    @property
    def n_bins(self) -> int:
        return self.bins_per_dim ** len(self.axes)

    def assign(self, xs) -> np.ndarray:
        """Bin index of every row of ``xs`` (n x d)."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if xs.shape[1] != self.d:
            xs = xs.reshape(-1, self.d)
        k = self.bins_per_dim
        index = np.zeros(xs.shape[0], dtype=int)
        for a in self.axes:
            v = xs[:, a]
            lo, hi = self.lo[a], self.hi[a]
            if np.any((v < lo) | (v > hi)) or np.any(np.isnan(v)):
                bad = v[(v < lo) | (v > hi) | np.isnan(v)][0]
                raise ValueError(f"value {bad} on axis {a} lies outside the partition [{lo}, {hi}]")
            cell = np.minimum(np.floor((v - lo) / (hi - lo) * k).astype(int), k - 1)
            index = index * k + cell
        return index


def assign_bin(partition: BinPartition, x) -> int:
    return int(partition.assign(np.asarray(x, dtype=float).reshape(1, -1))[0])


# ---------------------------------------------------------------------------
# minimal-length interval


def _gamma_hd_standard_scalar(nu: float, alpha: float) -> tuple[float, float]:
    """Shortest (1 - alpha) interval of Gamma(nu, rate 1) by nested root finding.

    The outer search runs over log(a): for nu near 1 the optimal lower end
    lies many decades below the mode.
    """
    if nu <= 1.0:
        return 0.0, _gamma_std_quantile(nu, 1.0 - alpha)
    mode = nu - 1.0

    def upper_for(log_a):
        a = math.exp(log_a)
        g = lambda b: (nu - 1.0) * (math.log(b) - log_a) - (b - a)
        hi = mode + 1.0
        while g(hi) > 0:
            hi = mode + 2.0 * (hi - mode)
        return brentq(g, mode, hi, xtol=1e-15 * max(1.0, mode))

    def mass_gap(log_a):
        b = upper_for(log_a)
        return regularized_lower_gamma(nu, b) - regularized_lower_gamma(nu, math.exp(log_a)) - (1.0 - alpha)

    t_lo = math.log(mode) - 12.0
    while mass_gap(t_lo) < 0:
        if t_lo < -660.0:
            # the optimal lower end underflows; use the monotone-density limit
            return 0.0, _gamma_std_quantile(nu, 1.0 - alpha)
        t_lo -= 20.0
    t = brentq(mass_gap, t_lo, math.log(mode) + math.log1p(-1e-6), xtol=1e-14)
    return math.exp(t), upper_for(t)


def _gamma_std_quantile(nu, p):
    f = lambda v: regularized_lower_gamma(nu, v) - p
    hi = max(nu, 1.0)
    while f(hi) < 0:
        hi *= 2.0
    return brentq(f, 0.0, hi, xtol=1e-15 * hi)


def _gamma_hd_standard(nu, alpha):
    """Vectorized shortest interval of Gamma(nu, 1); Newton on (a, b) with scalar fallback."""
    nu = np.asarray(nu, dtype=float)
    a = np.zeros_like(nu)
    b = np.zeros_like(nu)
    mono = nu <= 1.0
    for i in np.flatnonzero(mono):
        b[i] = _gamma_std_quantile(nu[i], 1.0 - alpha)
    idx = np.flatnonzero(~mono)
    if idx.size == 0:
        return a, b
    v = nu[idx]
    mode = v - 1.0
    # Wilson-Hilferty equal-tailed start
    z = ndtri(1.0 - alpha / 2.0)
    c = 1.0 / (9.0 * v)
    aa = np.clip(v * (1 - c - z * np.sqrt(c)) ** 3, 1e-3 * mode, 0.999 * mode)
    aa = np.where(1 - c - z * np.sqrt(c) > 0, aa, 0.5 * mode)
    bb = np.maximum(v * (1 - c + z * np.sqrt(c)) ** 3, mode * 1.001 + 1e-6)
    ok = np.zeros(v.shape, dtype=bool)
    lg = gammaln(v)

    def pdf(t):
        return np.exp((v - 1) * np.log(t) - t - lg)

    for _ in range(60):
        f1 = regularized_lower_gamma_array(v, bb) - regularized_lower_gamma_array(v, aa) - (1 - alpha)
        f2 = (v - 1) * (np.log(bb) - np.log(aa)) - (bb - aa)
        ok = (np.abs(f1) < 1e-13) & (np.abs(f2) < 1e-12 * np.maximum(1.0, v))
        if ok.all():
            break
        j11, j12 = -pdf(aa), pdf(bb)
        j21, j22 = 1 - (v - 1) / aa, (v - 1) / bb - 1
        det = j11 * j22 - j12 * j21
        da = (f1 * j22 - j12 * f2) / det
        db = (j11 * f2 - j21 * f1) / det
        step = np.ones_like(v)
        for _ in range(50):
            na, nb = aa - step * da, bb - step * db
            bad = ~((na > 0) & (na < mode) & (nb > mode) & np.isfinite(na) & np.isfinite(nb))
            if not bad.any():
                break
            step = np.where(bad, 0.5 * step, step)
        aa = np.where(ok, aa, na)
        bb = np.where(ok, bb, nb)
    for k in np.flatnonzero(~ok | ~np.isfinite(aa) | ~np.isfinite(bb)):
        aa[k], bb[k] = _gamma_hd_standard_scalar(float(v[k]), alpha)
    a[idx], b[idx] = aa, bb
    return a, b


def hd_bounds(spec: ModelSpec, mu, disp, alpha: float):
    """Vectorized shortest (1 - alpha) interval of the conditional law."""
    mu = np.asarray(mu, dtype=float)
    disp = np.asarray(disp, dtype=float)
    if spec.family == "gaussian":
        half = ndtri(1.0 - alpha / 2.0) * np.sqrt(disp)
        return mu - half, mu + half
    mu, nu = np.broadcast_arrays(mu, disp)
    sa, sb = _gamma_hd_standard(nu.ravel(), alpha)
    rate = (nu / mu).ravel()
    return (sa / rate).reshape(mu.shape), (sb / rate).reshape(mu.shape)


def min_length_interval(model: FittedModel, x, alpha: float) -> tuple[float, float]:
    """Shortest interval holding ``1 - alpha`` conditional probability at ``x``.

    Gamma laws with shape at most 1 have a decreasing density, so the lower
    end sits at 0.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    mu = model.mean(x)
    a, b = hd_bounds(model.spec, np.array([mu]), np.array([model.dispersion]), alpha)
    return float(a[0]), float(b[0])


def hd_region(model: FittedModel, x, alpha: float) -> IntervalUnion:
    return IntervalUnion((min_length_interval(model, x, alpha),))


# ---------------------------------------------------------------------------
# conformal regions


class ParametricConformal:
    """Parametric conformal regions for one training set.

    Holds the design, the full-data MLE (used to warm-start augmented refits)
    and the search window, so that regions at many query points share them.
    """

    def __init__(self, dataset: Dataset, spec: ModelSpec, config: ConformalConfig,
                 partition: BinPartition | None = None):
        self.dataset = dataset
        self.spec = spec
        self.config = config
        self.partition = partition
        self.fitter = AugmentedFitter(spec, dataset, tol=config.refit_tol,
                                      max_iter=config.refit_max_iter)
        self.model = self.fitter.base
        self.design = self.fitter.design
        self.window = config.window(dataset.y, spec.positive_support)
        self._bins = partition.assign(dataset.xs) if partition is not None else None
        # residual shortcuts for gaussian fits; False forces the generic density/CDF path
        self.closed_form = spec.family == "gaussian"

    # candidate batches ------------------------------------------------------

    def _batches(self, ys):
        for start in range(0, len(ys), BATCH):
            yield ys[start:start + BATCH]

    def _means(self, fits, X):
        eta = fits.beta @ X.T
        with np.errstate(invalid="ignore"):
            return inverse_link(self.spec, eta)

    def _binned_accept(self, x, rows, counter):
        spec = self.spec
        X = self.design.features[rows]
        Y = self.dataset.y[rows]
        xrow = expand_row(x, spec.degree)
        n_k = len(rows)
        need = floor_tol((n_k + 1) * self.config.alpha)

        def accept(ys):
            out = []
            for chunk in self._batches(ys):
                fits = self.fitter.fit_many(x, chunk)
                mu = self._means(fits, np.vstack([X, xrow]))
                disp = fits.dispersion[:, None]
                with np.errstate(invalid="ignore", divide="ignore"):
                    lp = logpdf(spec, Y[None, :], mu[:, :-1], disp)
                    lp_new = logpdf(spec, chunk[:, None], mu[:, -1:], disp)
                ok = fits.valid & np.all(np.isfinite(mu), axis=1) & np.isfinite(lp_new[:, 0])
                counter[0] += int(np.sum(~ok & (chunk > 0 if spec.positive_support else True)))
                count = 1 + np.sum(lp <= lp_new, axis=1)
                out.append(ok & (count >= need))
            return np.concatenate(out)

        return accept

    def _transform_accept(self, x, counter):
        spec = self.spec
        X = self.design.features
        Y = self.dataset.y
        n = len(Y)
        xrow = expand_row(x, spec.degree)
        alpha = self.config.alpha

        def accept(ys):
            out = []
            for chunk in self._batches(ys):
                fits = self.fitter.fit_many(x, chunk)
                ok = fits.valid.copy()
                mu = self._means(fits, np.vstack([X, xrow]))
                ok &= np.all(np.isfinite(mu), axis=1)
                res = np.zeros(len(chunk), dtype=bool)
                if ok.any():
                    mu_ok = mu[ok]
                    disp = fits.dispersion[ok]
                    u = cdf_array(spec, Y[None, :], mu_ok[:, :-1], disp[:, None])
                    u_new = cdf_array(spec, chunk[ok], mu_ok[:, -1], disp)
                    a, b = hd_bounds(spec, mu_ok[:, -1], disp, alpha)
                    u_lwr = cdf_array(spec, a, mu_ok[:, -1], disp)
                    u_upr = cdf_array(spec, b, mu_ok[:, -1], disp)
                    j_lo = np.floor((n + 1) * u_lwr + 1e-9).astype(int)
                    j_hi = np.clip(np.ceil((n + 1) * u_upr - 1e-9).astype(int), 1, n)
                    # U_[j] <= u  iff  #{U_i <= u} >= j ;  u <= U_[j]  iff  #{U_i < u} < j
                    n_le = np.sum(u <= u_new[:, None], axis=1)
                    n_lt = np.sum(u < u_new[:, None], axis=1)
                    res[ok] = (n_le >= j_lo) & (n_lt < j_hi)
                counter[0] += int(np.sum(~ok & (chunk > 0 if spec.positive_support else True)))
                out.append(res)
            return np.concatenate(out)

        return accept

    # gaussian shortcuts: one shared variance, so density and CDF comparisons
    # reduce to comparisons of residuals

    def _gaussian_binned_accept(self, x, rows, counter):
        need = floor_tol((len(rows) + 1) * self.config.alpha)
        c, d, e, f = (v[rows] if np.ndim(v) else v for v in self.fitter.gaussian_parts(x))
        # |c - y d| >= |e y - f|  iff  (k - y g)(m - y w) >= 0
        g, k = e + d, c + f
        w, m = d - e, c - f
        span = g * w < 0    # rows whose accepting set is the closed interval between the roots
        r1, r2 = k[span] / g[span], m[span] / w[span]
        lo, hi = np.sort(np.minimum(r1, r2)), np.sort(np.maximum(r1, r2))
        c_o, d_o = c[~span], d[~span]

        def accept(ys):
            ys = np.asarray(ys, dtype=float)
            count = 1 + np.searchsorted(lo, ys, "right") - np.searchsorted(hi, ys, "left")
            if c_o.size:
                count += np.sum(np.abs(c_o[None, :] - ys[:, None] * d_o[None, :])
                                >= np.abs(e * ys - f)[:, None], axis=1)
            valid = self.fitter.gaussian_variance(x, ys) > 1e-300
            counter[0] += int(np.sum(~valid))
            return valid & (count >= need)

        return accept

    def _gaussian_transform_accept(self, x, counter):
        n = self.dataset.n
        alpha = self.config.alpha
        # the HD interval sits at CDF levels alpha/2 and 1 - alpha/2 for any fit
        j_lo = floor_tol((n + 1) * alpha / 2)
        j_hi = min(ceil_tol((n + 1) * (1 - alpha / 2)), n)
        # r_i <= r_new  iff  k_i <= y g_i, so each row switches at one threshold
        c, d, e, f = self.fitter.gaussian_parts(x)
        g, k = e + d, c + f
        pos, neg, flat = g > 0, g < 0, g == 0
        tp = np.sort(k[pos] / g[pos])
        tn = np.sort(k[neg] / g[neg])
        le0, lt0 = int(np.sum(k[flat] <= 0)), int(np.sum(k[flat] < 0))

        def accept(ys):
            ys = np.asarray(ys, dtype=float)
            n_le = np.searchsorted(tp, ys, "right") + tn.size - np.searchsorted(tn, ys, "left") + le0
            n_lt = np.searchsorted(tp, ys, "left") + tn.size - np.searchsorted(tn, ys, "right") + lt0
            valid = self.fitter.gaussian_variance(x, ys) > 1e-300
            counter[0] += int(np.sum(~valid))
            return valid & (n_le >= j_lo) & (n_lt < j_hi)

        return accept

    # public regions -----------------------------------------------------------

    def bin_rows(self, x) -> np.ndarray:
        if self.partition is None:
            raise ValueError("binned region needs a partition")
        k = assign_bin(self.partition, x)
        rows = np.flatnonzero(self._bins == k)
        if rows.size == 0:
            raise EmptyBinError(f"bin {k} contains no training rows")
        return rows

    def binned(self, x) -> IntervalUnion:
        rows = self.bin_rows(x)
        counter = [0]
        lo, hi = self.window
        make = self._gaussian_binned_accept if self.closed_form else self._binned_accept
        region = region_from_acceptance(make(x, rows, counter), self.config, lo, hi, vectorized=True)
        return with_warnings(region, counter[0])

    def transform(self, x) -> IntervalUnion:
        counter = [0]
        lo, hi = self.window
        make = self._gaussian_transform_accept if self.closed_form else self._transform_accept
        region = region_from_acceptance(make(x, counter), self.config, lo, hi, vectorized=True)
        return with_warnings(region, counter[0])

    def hd(self, x) -> IntervalUnion:
        return hd_region(self.model, x, self.config.alpha)


def binned_region(dataset: Dataset, spec: ModelSpec, partition: BinPartition, x,
                  config: ConformalConfig) -> IntervalUnion:
    return ParametricConformal(dataset, spec, config, partition).binned(x)


def transform_region(dataset: Dataset, spec: ModelSpec, x, config: ConformalConfig) -> IntervalUnion:
    return ParametricConformal(dataset, spec, config).transform(x)
