"""Regularized lower incomplete gamma function.

Series expansion below ``x < s + 1`` and a modified Lentz continued fraction
above it, following the classical split.  Both a scalar routine and a
vectorized numpy routine are provided; the vectorized one iterates all
elements in lockstep and masks the ones that have already converged.
"""

import math

import numpy as np
from scipy.special import gammaln as _lgamma

_EPS = 1e-16
_TINY = 1e-300
_MAX_ITER = 1000


def _prefactor(s, x):
    return math.exp(-x + s * math.log(x) - math.lgamma(s))


def _series(s, x):
    ap = s
    term = 1.0 / s
    total = term
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma series did not converge (s={s}, x={x})")
    return total * _prefactor(s, x)


def _continued_fraction(s, x):
    # upper tail Q(s, x)
    b = x + 1.0 - s
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    else:
        raise ArithmeticError(f"incomplete gamma continued fraction did not converge (s={s}, x={x})")
    return h * _prefactor(s, x)


def regularized_lower_gamma(s, x):
    """P(s, x) = gamma(s, x) / Gamma(s) for ``s > 0`` and ``x >= 0``."""
    s = float(s)
    x = float(x)
    if not s > 0.0:
        raise ValueError(f"shape must be positive, got {s}")
    if x < 0.0 or math.isnan(x):
        raise ValueError(f"argument must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < s + 1.0:
        return min(1.0, _series(s, x))
    return max(0.0, 1.0 - _continued_fraction(s, x))


def regularized_lower_gamma_array(s, x):
    """Vectorized :func:`regularized_lower_gamma` with numpy broadcasting."""
    s, x = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(x, dtype=float))
    if np.any(~(s > 0)):
        raise ValueError("shape must be positive")
    if np.any(~(x >= 0)):
        raise ValueError("argument must be nonnegative")
    shape = s.shape
    s = s.ravel()
    x = x.ravel()
    out = np.zeros_like(x)
    out[np.isinf(x)] = 1.0

    finite = (x > 0) & np.isfinite(x)
    use_series = finite & (x < s + 1.0)
    use_cf = finite & ~use_series

    if use_series.any():
        ss, xs = s[use_series], x[use_series]
        ap = ss.copy()
        term = 1.0 / ss
        total = term.copy()
        active = np.ones(ss.shape, dtype=bool)
        for _ in range(_MAX_ITER):
            ap[active] += 1.0
            term[active] *= xs[active] / ap[active]
            total[active] += term[active]
            active &= np.abs(term) >= np.abs(total) * _EPS
            if not active.any():
                break
        else:
            raise ArithmeticError("incomplete gamma series did not converge")
        logpre = -xs + ss * np.log(xs) - _lgamma(ss)
        out[use_series] = np.minimum(1.0, total * np.exp(logpre))

    if use_cf.any():
        ss, xs = s[use_cf], x[use_cf]
        b = xs + 1.0 - ss
        c = np.full(ss.shape, 1.0 / _TINY)
        d = 1.0 / b
        h = d.copy()
        active = np.ones(ss.shape, dtype=bool)
        for i in range(1, _MAX_ITER + 1):
            an = -i * (i - ss[active])
            b[active] += 2.0
            da = an * d[active] + b[active]
            da = np.where(np.abs(da) < _TINY, _TINY, da)
            ca = b[active] + an / c[active]
            ca = np.where(np.abs(ca) < _TINY, _TINY, ca)
            da = 1.0 / da
            delta = da * ca
            d[active] = da
            c[active] = ca
            h[active] *= delta
            done = np.abs(delta - 1.0) < _EPS
            idx = np.flatnonzero(active)
            active[idx[done]] = False
            if not active.any():
                break
        else:
            raise ArithmeticError("incomplete gamma continued fraction did not converge")
        logpre = -xs + ss * np.log(xs) - _lgamma(ss)
        out[use_cf] = np.maximum(0.0, 1.0 - h * np.exp(logpre))

    return out.reshape(shape)
