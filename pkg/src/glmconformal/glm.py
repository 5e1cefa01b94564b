"""Gaussian and Gamma regression models fit by maximum likelihood.

Dispersion is carried as ``sigma^2`` for the Gaussian family and as the shape
``nu`` for the Gamma family, whose conditional law is Gamma(nu, rate nu/mu).
Optimization and score vectors use ``(beta, log dispersion)`` coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, gammaln, ndtr, polygamma

from .special import regularized_lower_gamma_array

FAMILY_LINKS = {
    "gaussian": ("identity",),
    "gamma": ("inverse", "log"),
}
DEFAULT_LINK = {"gaussian": "identity", "gamma": "inverse"}

MAX_NEWTON_ITER = 100
MAX_HALVINGS = 30


class FitError(ArithmeticError):
    """Raised when a maximum likelihood fit cannot be computed."""


class SupportError(ValueError):
    """Raised when a query point lies outside the model's support."""


@dataclass(frozen=True)
class ModelSpec:
    family: str = "gaussian"
    link: str | None = None
    degree: int = 1
    intercept: bool = True

    def __post_init__(self):
        if self.family not in FAMILY_LINKS:
            raise ValueError(f"unknown family {self.family!r}; expected one of {sorted(FAMILY_LINKS)}")
        if self.link is None:
            object.__setattr__(self, "link", DEFAULT_LINK[self.family])
        if self.link not in FAMILY_LINKS[self.family]:
            raise ValueError(f"link {self.link!r} is not available for the {self.family} family")
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"degree must be a positive integer, got {self.degree}")
        object.__setattr__(self, "degree", int(self.degree))
        if not self.intercept:
            raise ValueError("models without an intercept are not supported")

    @property
    def positive_support(self) -> bool:
        return self.family == "gamma"


@dataclass(frozen=True)
class Dataset:
    """Main effects ``xs`` (n x d) and responses ``y`` (n,)."""

    xs: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if xs.shape[0] != y.shape[0]:
            raise ValueError(f"{xs.shape[0]} predictor rows but {y.shape[0]} responses")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.xs.shape[1]

    def permuted(self, order) -> "Dataset":
        return Dataset(self.xs[order], self.y[order])


@dataclass(frozen=True)
class Design:
    main_effects: np.ndarray
    features: np.ndarray
    degree: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.main_effects.shape[1]

    @property
    def m(self) -> int:
        return self.features.shape[1]


def expand_row(x, degree: int) -> np.ndarray:
    """Feature vector ``[1, x1, x1^2, ..., x1^k, x2, ...]`` for one point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    powers = x[:, None] ** np.arange(1, degree + 1)
    return np.concatenate(([1.0], powers.ravel()))


def expand_design(main_effects, spec: ModelSpec) -> Design:
    xs = np.asarray(main_effects, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if xs.ndim != 2 or xs.shape[0] < 1:
        raise ValueError("main effects must be a nonempty n x d matrix")
    if not np.all(np.isfinite(xs)):
        raise ValueError("main effects contain non-finite values")
    powers = xs[:, :, None] ** np.arange(1, spec.degree + 1)
    features = np.hstack([np.ones((xs.shape[0], 1)), powers.reshape(xs.shape[0], -1)])
    return Design(main_effects=xs, features=features, degree=spec.degree)


# ---------------------------------------------------------------------------
# vectorized family kernels; mu and dispersion broadcast against y


def inverse_link(spec: ModelSpec, eta):
    eta = np.asarray(eta, dtype=float)
    if spec.link == "identity":
        return eta
    if spec.link == "log":
        with np.errstate(over="ignore"):
            return np.exp(eta)
    with np.errstate(divide="ignore"):
        return np.where(eta > 0, 1.0 / eta, np.nan)


def logpdf(spec: ModelSpec, y, mu, disp):
    y = np.asarray(y, dtype=float)
    if spec.family == "gaussian":
        return -0.5 * (np.log(2 * np.pi * disp) + (y - mu) ** 2 / disp)
    nu = disp
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = nu * np.log(nu / mu) + (nu - 1) * np.log(y) - nu * y / mu - gammaln(nu)
    return np.where(y > 0, val, -np.inf)


def cdf_array(spec: ModelSpec, y, mu, disp):
    y = np.asarray(y, dtype=float)
    if spec.family == "gaussian":
        return ndtr((y - mu) / np.sqrt(disp))
    nu = np.asarray(disp, dtype=float)
    z = np.clip(nu * y / mu, 0.0, None)
    nu, z = np.broadcast_arrays(nu, z)
    return regularized_lower_gamma_array(nu, z)


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FittedModel:
    spec: ModelSpec
    beta: np.ndarray
    dispersion: float
    log_likelihood: float
    iterations: int
    converged: bool
    score_norm: float = field(default=0.0, compare=False)

    def mean(self, x) -> float:
        """Conditional mean at main effects ``x``."""
        eta = float(expand_row(x, self.spec.degree) @ self.beta)
        if self.spec.link == "inverse" and eta <= 0:
            raise SupportError(f"linear predictor {eta:.6g} is not positive at x={x}; inverse link undefined")
        return float(inverse_link(self.spec, eta))

    @property
    def params(self) -> np.ndarray:
        """``(beta, dispersion)`` on the natural scale."""
        return np.append(self.beta, self.dispersion)


def _check_response(spec: ModelSpec, y: np.ndarray) -> None:
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite values")
    if spec.family == "gamma" and np.any(y <= 0):
        raise ValueError("gamma family requires strictly positive responses")


def _feasible_mean(spec, X, beta):
    eta = X @ beta
    if spec.link == "inverse" and np.any(eta <= 0):
        return None
    return inverse_link(spec, eta)


def log_likelihood(spec: ModelSpec, design: Design, response, beta, dispersion) -> float:
    X = design.features
    y = np.asarray(response, dtype=float)
    mu = _feasible_mean(spec, X, np.asarray(beta, dtype=float))
    if mu is None or not dispersion > 0:
        raise ValueError("parameters outside the feasible set")
    return float(np.sum(logpdf(spec, y, mu, dispersion)))


def _gamma_derivatives(spec, X, y, beta, log_nu, hessian=True):
    nu = math.exp(log_nu)
    eta = X @ beta
    mu = inverse_link(spec, eta)
    if spec.link == "inverse":
        d_eta = nu * (mu - y)
        w_obs = nu * mu**2
        w_exp = w_obs
    else:
        d_eta = nu * (y - mu) / mu
        w_obs = nu * y / mu
        w_exp = np.full_like(mu, nu)
    d_nu = np.sum(math.log(nu) + 1.0 - np.log(mu) + np.log(y) - y / mu) - len(y) * digamma(nu)
    grad = np.append(X.T @ d_eta, nu * d_nu)
    if not hessian:
        return grad, None, None
    n = len(y)
    trig = float(polygamma(1, nu))
    hbb = -(X.T * w_obs) @ X
    hbt = X.T @ d_eta
    htt = nu * d_nu + nu**2 * n * (1.0 / nu - trig)
    H = np.block([[hbb, hbt[:, None]], [hbt[None, :], np.array([[htt]])]])
    fisher = np.zeros_like(H)
    fisher[:-1, :-1] = -(X.T * w_exp) @ X
    fisher[-1, -1] = nu**2 * n * (1.0 / nu - trig)
    return grad, H, fisher


def score(spec: ModelSpec, design: Design, response, beta, dispersion) -> np.ndarray:
    """Gradient of the total log likelihood in ``(beta, log dispersion)``."""
    X = design.features
    y = np.asarray(response, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if not dispersion > 0:
        raise ValueError("dispersion must be positive")
    if spec.family == "gaussian":
        r = y - X @ beta
        return np.append(X.T @ r / dispersion, -0.5 * len(y) + 0.5 * (r @ r) / dispersion)
    if _feasible_mean(spec, X, beta) is None:
        raise ValueError("linear predictor is not positive at every row under the inverse link")
    _check_response(spec, y)
    grad, _, _ = _gamma_derivatives(spec, X, y, beta, math.log(dispersion), hessian=False)
    return grad


def _fit_gaussian(spec, design, y):
    X = design.features
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    sigma2 = float(r @ r) / len(y)
    # residuals of an exact fit are rounding noise of order eps * |y|
    if not sigma2 > (1e-12 * max(float(np.max(np.abs(y))), 1e-150)) ** 2:
        raise FitError("residual variance is zero; the Gaussian MLE is degenerate")
    ll = float(np.sum(logpdf(spec, y, X @ beta, sigma2)))
    s = score(spec, design, y, beta, sigma2)
    return FittedModel(spec, beta, sigma2, ll, 0, True, float(np.max(np.abs(s))))


def _gamma_start(spec, X, y):
    ybar = float(np.mean(y))
    var = float(np.var(y))
    beta = np.zeros(X.shape[1])
    beta[0] = 1.0 / ybar if spec.link == "inverse" else math.log(ybar)
    nu = ybar**2 / var if var > 0 else 1.0
    return beta, math.log(min(max(nu, 1e-3), 1e6))


def _fit_gamma(spec, design, y, warm_start, tol, max_iter):
    X = design.features
    n = len(y)
    if warm_start is not None and _feasible_mean(spec, X, warm_start.beta) is not None:
        beta, log_nu = warm_start.beta.astype(float).copy(), math.log(warm_start.dispersion)
    else:
        beta, log_nu = _gamma_start(spec, X, y)
    theta = np.append(beta, log_nu)

    def ll_at(t):
        mu = _feasible_mean(spec, X, t[:-1])
        if mu is None or not np.isfinite(t[-1]) or abs(t[-1]) > 700:
            return None
        return float(np.sum(logpdf(spec, y, mu, math.exp(t[-1]))))

    ll = ll_at(theta)
    converged = False
    it = 0
    grad = None
    for it in range(max_iter + 1):
        grad, H, fisher = _gamma_derivatives(spec, X, y, theta[:-1], theta[-1])
        if np.max(np.abs(grad)) < tol * n:
            converged = True
            theta, ll, grad = _polish(spec, X, y, theta, ll, grad, H, ll_at)
            break
        if it == max_iter:
            break
        try:
            np.linalg.cholesky(-H)
            step = np.linalg.solve(-H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(-fisher, grad)
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = theta + scale * step
            ll_new = ll_at(cand)
            if ll_new is not None and ll_new >= ll - 1e-10 * (1.0 + abs(ll)):
                break
            scale *= 0.5
        else:
            raise FitError("gamma Newton step infeasible after 30 step-halvings")
        theta, ll = cand, ll_new
    beta, nu = theta[:-1], math.exp(theta[-1])
    return FittedModel(spec, beta, nu, ll, it, converged, float(np.max(np.abs(grad))))


def _polish(spec, X, y, theta, ll, grad, H, ll_at):
    # one extra Newton step once within tolerance, kept only if it shrinks the score
    try:
        cand = theta + np.linalg.solve(-H, grad)
    except np.linalg.LinAlgError:
        return theta, ll, grad
    ll_new = ll_at(cand)
    if ll_new is None:
        return theta, ll, grad
    g_new, _, _ = _gamma_derivatives(spec, X, y, cand[:-1], cand[-1], hessian=False)
    if np.max(np.abs(g_new)) < np.max(np.abs(grad)):
        return cand, ll_new, g_new
    return theta, ll, grad


def fit_mle(spec: ModelSpec, design: Design, response, warm_start: FittedModel | None = None,
            tol: float = 1e-8, max_iter: int = MAX_NEWTON_ITER) -> FittedModel:
    """Maximum likelihood estimate of ``(beta, dispersion)``.

    Gaussian fits are closed form with the ML variance ``RSS / n``.  Gamma
    fits run Newton ascent on ``(beta, log nu)`` with step halving; the
    result has ``converged=False`` if the score tolerance ``tol * n`` is not
    met within ``max_iter`` iterations.
    """
    y = np.asarray(response, dtype=float).ravel()
    if y.shape[0] != design.n:
        raise ValueError(f"design has {design.n} rows but response has {y.shape[0]}")
    if design.n < design.m + 2:
        raise ValueError(f"need at least m + 2 = {design.m + 2} rows to fit, got {design.n}")
    if not np.all(np.isfinite(design.features)):
        raise ValueError("design contains non-finite values")
    _check_response(spec, y)
    if spec.family == "gaussian":
        return _fit_gaussian(spec, design, y)
    return _fit_gamma(spec, design, y, warm_start, tol, max_iter)


def fit(spec: ModelSpec, dataset: Dataset, **kwargs) -> FittedModel:
    return fit_mle(spec, expand_design(dataset.xs, spec), dataset.y, **kwargs)


# ---------------------------------------------------------------------------
# scalar evaluation at a query point


def log_density(model: FittedModel, y: float, x) -> float:
    mu = model.mean(x)
    return float(logpdf(model.spec, float(y), mu, model.dispersion))


def cdf(model: FittedModel, y: float, x) -> float:
    mu = model.mean(x)
    if model.spec.family == "gamma" and y <= 0:
        return 0.0
    return float(cdf_array(model.spec, float(y), mu, model.dispersion))


def quantile(model: FittedModel, p: float, x) -> float:
    """Inverse conditional CDF by bracketing root-finding."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    mu = model.mean(x)
    return _quantile(model.spec, p, mu, model.dispersion)


def _quantile(spec, p, mu, disp):
    def f(v):
        return float(cdf_array(spec, v, mu, disp)) - p

    if spec.family == "gaussian":
        sd = math.sqrt(disp)
        lo, hi = mu - sd, mu + sd
        while f(lo) > 0:
            lo -= 2 * (hi - lo)
        while f(hi) < 0:
            hi += 2 * (hi - lo)
        scale = sd
    else:
        lo, hi = 0.0, mu
        while f(hi) < 0:
            lo, hi = hi, 2 * hi
        # quantiles of small shapes sit many decades below the mean; stay relative
        scale = 1e-290
    return brentq(f, lo, hi, xtol=1e-15 * scale, rtol=4 * np.finfo(float).eps, maxiter=500)


# ---------------------------------------------------------------------------
# refits on data augmented with one candidate point


@dataclass(frozen=True)
class AugmentedFits:
    """Parameters of the augmented-data MLE for a batch of candidates."""

    beta: np.ndarray        # (G, m)
    dispersion: np.ndarray  # (G,)
    valid: np.ndarray       # (G,) bool; False where the refit failed


class AugmentedFitter:
    """Refits ``spec`` on ``dataset`` plus a candidate point ``(x, y)``.

    Gaussian refits use the closed form in which the augmented coefficients
    are affine in the candidate response.  Gamma refits run Newton ascent
    warm-started from the full-data MLE and keep the most recent result
    keyed by the candidate.
    """

    def __init__(self, spec: ModelSpec, dataset: Dataset, base: FittedModel | None = None,
                 tol: float = 1e-8, max_iter: int = 25):
        self.spec = spec
        self.dataset = dataset
        self.design = expand_design(dataset.xs, spec)
        self.base = base if base is not None else fit_mle(spec, self.design, dataset.y)
        self.tol = tol
        self.max_iter = max_iter
        self._last = None

    def _gaussian_parts(self, xrow):
        # augmented coefficients are b0 + y h; residuals are c - y d (training) and e y - f (candidate)
        X = self.design.features
        Y = self.dataset.y
        A = X.T @ X + np.outer(xrow, xrow)
        b0, h = np.linalg.solve(A, np.column_stack([X.T @ Y, xrow])).T
        return b0, h, Y - X @ b0, X @ h, 1.0 - xrow @ h, xrow @ b0

    def gaussian_residuals(self, x, ys):
        """Augmented-fit residuals ``(G, n)``, candidate residuals ``(G,)`` and variances."""
        if self.spec.family != "gaussian":
            raise ValueError("closed-form residuals exist only for the gaussian family")
        ys = np.asarray(ys, dtype=float)
        xrow = expand_row(x, self.spec.degree)
        _, _, c, dvec, e, f = self._gaussian_parts(xrow)
        fits = self._gaussian_many(xrow, ys)
        return c[None, :] - ys[:, None] * dvec[None, :], e * ys - f, fits

    def gaussian_parts(self, x):
        """``(c, d, e, f)`` with training residuals ``c - y d`` and candidate residual ``e y - f``."""
        if self.spec.family != "gaussian":
            raise ValueError("closed-form residuals exist only for the gaussian family")
        return self._gaussian_parts(expand_row(x, self.spec.degree))[2:]

    def gaussian_variance(self, x, ys) -> np.ndarray:
        return self._gaussian_many(expand_row(x, self.spec.degree), np.asarray(ys, dtype=float)).dispersion

    def _gaussian_many(self, xrow, ys):
        Y = self.dataset.y
        b0, h, c, dvec, e, f = self._gaussian_parts(xrow)
        rss = (c @ c) - 2.0 * ys * (c @ dvec) + ys**2 * (dvec @ dvec) + (e * ys - f) ** 2
        rss = np.maximum(rss, 0.0)
        disp = rss / (len(Y) + 1)
        beta = b0[None, :] + ys[:, None] * h[None, :]
        return AugmentedFits(beta, disp, disp > 1e-300)

    def fit_one(self, x, y: float) -> FittedModel:
        key = (tuple(np.atleast_1d(np.asarray(x, dtype=float))), float(y))
        if self._last is not None and self._last[0] == key:
            return self._last[1]
        xs = np.vstack([self.dataset.xs, np.atleast_2d(np.asarray(x, dtype=float))])
        ys = np.append(self.dataset.y, y)
        model = fit_mle(self.spec, expand_design(xs, self.spec), ys, warm_start=self.base,
                        tol=self.tol, max_iter=self.max_iter)
        self._last = (key, model)
        return model

    def fit_many(self, x, ys) -> AugmentedFits:
        ys = np.asarray(ys, dtype=float)
        xrow = expand_row(x, self.spec.degree)
        if self.spec.family == "gaussian":
            return self._gaussian_many(xrow, ys)
        m = xrow.shape[0]
        beta = np.full((ys.shape[0], m), np.nan)
        disp = np.full(ys.shape[0], np.nan)
        valid = np.zeros(ys.shape[0], dtype=bool)
        for g, yv in enumerate(ys):
            if yv <= 0:
                continue
            try:
                model = self.fit_one(x, yv)
            except (FitError, ValueError, np.linalg.LinAlgError):
                continue
            if model.converged:
                beta[g], disp[g], valid[g] = model.beta, model.dispersion, True
        return AugmentedFits(beta, disp, valid)
