"""Comparison regions: binned kernel-density conformal and residual conformal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import (
    ConformalConfig,
    IntervalUnion,
    ceil_tol,
    region_from_acceptance,
    region_from_grid,
)
from .glm import Dataset, ModelSpec, expand_design, expand_row
from .parametric import BinPartition, EmptyBinError, assign_bin

_SQRT_2PI = np.sqrt(2.0 * np.pi)
DISPERSION_FLOOR = 1e-6


def gaussian_kernel(u):
    return np.exp(-0.5 * np.asarray(u) ** 2) / _SQRT_2PI


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel with Silverman's rule or a fixed bandwidth ``h``."""

    bandwidth_rule: str = "silverman"
    h: float | None = None
    kernel: str = "gaussian"

    def __post_init__(self):
        if self.kernel != "gaussian":
            raise ValueError("only the gaussian kernel is supported")
        if self.bandwidth_rule not in ("silverman", "fixed"):
            raise ValueError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed" and not (self.h is not None and self.h > 0):
            raise ValueError("a fixed bandwidth must be positive")

    @classmethod
    def fixed(cls, h: float) -> "KernelConfig":
        return cls("fixed", h)

    def bandwidth(self, responses) -> float:
        if self.bandwidth_rule == "fixed":
            return float(self.h)
        y = np.asarray(responses, dtype=float)
        sd = float(np.std(y, ddof=1)) if y.size > 1 else 0.0
        if not sd > 0:
            raise ValueError("Silverman bandwidth is zero for this bin; use a fixed bandwidth")
        return 1.06 * sd * y.size ** (-0.2)


class KernelConformal:
    """Binned nonparametric conformal region; one region per bin."""

    def __init__(self, dataset: Dataset, partition: BinPartition, config: ConformalConfig,
                 kcfg: KernelConfig | None = None):
        self.dataset = dataset
        self.partition = partition
        self.config = config
        self.kcfg = kcfg or KernelConfig()
        self.window = config.window(dataset.y)
        self._bins = partition.assign(dataset.xs)
        self._cache = {}

    def _accept(self, yk):
        n_k = yk.size
        h = self.kcfg.bandwidth(yk)
        alpha = self.config.alpha
        base = gaussian_kernel((yk[:, None] - yk[None, :]) / h).sum(axis=1) / (n_k * h)

        def accept(ys):
            kern = gaussian_kernel((yk[None, :] - ys[:, None]) / h)
            shrink = n_k / (n_k + 1)
            dens_i = shrink * base[None, :] + kern / ((n_k + 1) * h)
            p_y = kern.sum(axis=1) / (n_k * h)
            dens_new = shrink * p_y + gaussian_kernel(0.0) / ((n_k + 1) * h)
            rank = (1 + np.sum(dens_i <= dens_new[:, None], axis=1)) / (n_k + 1)
            return rank >= alpha

        return accept

    def region_for_bin(self, k: int) -> IntervalUnion:
        if k not in self._cache:
            yk = self.dataset.y[self._bins == k]
            if yk.size == 0:
                raise EmptyBinError(f"bin {k} contains no training rows")
            lo, hi = self.window
            self._cache[k] = region_from_acceptance(self._accept(yk), self.config, lo, hi,
                                                    vectorized=True)
        return self._cache[k]

    def region(self, x) -> IntervalUnion:
        return self.region_for_bin(assign_bin(self.partition, x))


def kernel_conformal_region(dataset: Dataset, partition: BinPartition, x, config: ConformalConfig,
                            kcfg: KernelConfig | None = None) -> IntervalUnion:
    return KernelConformal(dataset, partition, config, kcfg).region(x)


class ResidualConformal:
    """LS and locally weighted (LSLW) residual conformal regions on a fixed grid.

    The mean model is least squares on the polynomial design of ``mean_spec``.
    For LSLW the dispersion model is a least-squares fit of the absolute
    residuals on the same design, floored at ``1e-6``.
    """

    def __init__(self, dataset: Dataset, mean_spec: ModelSpec, alpha: float,
                 grid_points: int = 100, window: tuple[float, float] | None = None):
        if mean_spec.family != "gaussian" or mean_spec.link != "identity":
            raise ValueError("residual conformal regions need a least-squares (gaussian identity) mean model")
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if grid_points < 2:
            raise ValueError("grid_points must be at least 2")
        self.dataset = dataset
        self.spec = mean_spec
        self.alpha = alpha
        self.X = expand_design(dataset.xs, mean_spec).features
        self.window = window if window is not None else ConformalConfig(alpha).window(dataset.y)
        self.grid = np.linspace(self.window[0], self.window[1], grid_points)
        n = dataset.n
        self.threshold = ceil_tol((1.0 - alpha) * (n + 1))

    def _residuals(self, x, weighted):
        X, Y = self.X, self.dataset.y
        xrow = expand_row(x, self.spec.degree)
        Xa = np.vstack([X, xrow])
        A = Xa.T @ Xa
        if np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError("least-squares system is singular")
        ys = self.grid
        Ya = np.concatenate([np.broadcast_to(Y, (ys.size, Y.size)), ys[:, None]], axis=1)
        coef = np.linalg.solve(A, Xa.T @ Ya.T)          # (m, G)
        resid = np.abs(Ya - (Xa @ coef).T)               # (G, n + 1)
        if weighted:
            gamma = np.linalg.solve(A, Xa.T @ resid.T)
            rho = np.maximum((Xa @ gamma).T, DISPERSION_FLOOR)
            resid = resid / rho
        return resid

    def _region(self, x, weighted):
        resid = self._residuals(x, weighted)
        rank = np.sum(resid <= resid[:, -1:], axis=1)
        return region_from_grid(self.grid, rank <= self.threshold)

    def ls(self, x) -> IntervalUnion:
        return self._region(x, weighted=False)

    def lslw(self, x) -> IntervalUnion:
        return self._region(x, weighted=True)

    def ranks(self, x, weighted=False) -> np.ndarray:
        resid = self._residuals(x, weighted)
        return np.sum(resid <= resid[:, -1:], axis=1)


def ls_region(dataset: Dataset, mean_spec: ModelSpec, x, alpha: float, grid_points: int = 100,
              window: tuple[float, float] | None = None) -> IntervalUnion:
    return ResidualConformal(dataset, mean_spec, alpha, grid_points, window).ls(x)


def lslw_region(dataset: Dataset, mean_spec: ModelSpec, x, alpha: float, grid_points: int = 100,
                window: tuple[float, float] | None = None) -> IntervalUnion:
    return ResidualConformal(dataset, mean_spec, alpha, grid_points, window).lslw(x)
