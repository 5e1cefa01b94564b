import math

import numpy as np
import pytest

from glmconformal.baselines import (
    KernelConfig,
    KernelConformal,
    ResidualConformal,
    kernel_conformal_region,
    ls_region,
)
from glmconformal.engine import ConformalConfig
from glmconformal.glm import Dataset, ModelSpec, expand_design
from glmconformal.parametric import BinPartition, EmptyBinError

import oracles

GAUSS = ModelSpec("gaussian")
PREC = 0.005


def setting_c(rng, n=150):
    x = rng.uniform(size=n)
    return Dataset(x, 2 + 5 * x + rng.standard_normal(n))


# --- kernel -------------------------------------------------------------------------

def test_silverman_bandwidth():
    y = np.array([1.0, 2.0, 4.0, 7.0])
    assert KernelConfig().bandwidth(y) == pytest.approx(1.06 * np.std(y, ddof=1) * 4 ** -0.2)
    assert KernelConfig.fixed(0.3).bandwidth(y) == 0.3
    with pytest.raises(ValueError):
        KernelConfig().bandwidth(np.ones(5))
    with pytest.raises(ValueError):
        KernelConfig("fixed", h=-1.0)


def test_small_bin_accepts_window(rng):
    data = Dataset(np.linspace(0.05, 0.45, 5), rng.normal(size=5))
    cfg = ConformalConfig(alpha=0.1)
    r = kernel_conformal_region(data, BinPartition(1, 1, hi=(0.5,)), [0.2], cfg)
    assert r.pieces == (cfg.window(data.y),)


def test_identical_responses_accept_the_data_value():
    data = Dataset(np.linspace(0, 1, 6), np.full(6, 2.0))
    cfg = ConformalConfig(alpha=0.9, search_lo=0.0, search_hi=4.0)
    r = KernelConformal(data, BinPartition(1, 1), cfg, KernelConfig.fixed(0.5)).region([0.5])
    assert 2.0 in r


def test_kernel_matches_dense_grid_oracle(rng):
    yk = np.array([0.3, 0.9, 1.1, 1.4, 2.6, 2.9, 3.0, 4.2])
    data = Dataset(rng.uniform(size=8), yk)
    cfg = ConformalConfig(alpha=0.25, precision=PREC)
    kc = KernelConformal(data, BinPartition(1, 1), cfg, KernelConfig.fixed(0.5))
    region = kc.region([0.5])
    grid = np.arange(kc.window[0], kc.window[1] + 2.5e-4, 5e-4)
    oracle = oracles.kernel_oracle(yk, 0.5, 0.25, grid)
    assert oracles.compare(region, oracle, 2 * PREC), (region, oracle)


def test_kernel_one_region_per_bin_and_permutation(rng):
    data = setting_c(rng, 60)
    cfg = ConformalConfig()
    kc = KernelConformal(data, BinPartition(1, 2), cfg)
    assert kc.region([0.1]) is kc.region([0.4])
    kp = KernelConformal(data.permuted(rng.permutation(60)), BinPartition(1, 2), cfg)
    assert kc.region([0.7]) == kp.region([0.7])


def test_kernel_empty_bin(rng):
    data = Dataset(rng.uniform(0, 0.4, 10), rng.normal(size=10))
    with pytest.raises(EmptyBinError):
        kernel_conformal_region(data, BinPartition(1, 2), [0.8], ConformalConfig())


# --- LS / LSLW ----------------------------------------------------------------------

def test_threshold_arithmetic(rng):
    data = setting_c(rng, 9)
    assert ResidualConformal(data, GAUSS, 0.1).threshold == 9


def test_ls_matches_refit_loop(rng):
    data = setting_c(rng, 30)
    rc = ResidualConformal(data, ModelSpec("gaussian", degree=3), 0.1, grid_points=100)
    x = 0.35
    X = expand_design(np.append(data.xs[:, 0], x), ModelSpec("gaussian", degree=3)).features
    accepted = []
    for y in rc.grid:
        ya = np.append(data.y, y)
        beta = np.linalg.lstsq(X, ya, rcond=None)[0]
        r = np.abs(ya - X @ beta)
        accepted.append(np.sum(r <= r[-1]) <= math.ceil(0.9 * 31))
    rebuilt = oracles.runs(rc.grid, np.array(accepted))
    assert rc.ls([x]).pieces == tuple((float(a), float(b)) for a, b in rebuilt if b > a)


def test_lslw_matches_refit_loop(rng):
    data = setting_c(rng, 30)
    rc = ResidualConformal(data, GAUSS, 0.2, grid_points=100)
    x = 0.8
    X = expand_design(np.append(data.xs[:, 0], x), GAUSS).features
    accepted = []
    for y in rc.grid:
        ya = np.append(data.y, y)
        r = np.abs(ya - X @ np.linalg.lstsq(X, ya, rcond=None)[0])
        rho = np.maximum(X @ np.linalg.lstsq(X, r, rcond=None)[0], 1e-6)
        s = r / rho
        accepted.append(np.sum(s <= s[-1]) <= math.ceil(0.8 * 31))
    rebuilt = oracles.runs(rc.grid, np.array(accepted))
    assert rc.lslw([x]).pieces == tuple((float(a), float(b)) for a, b in rebuilt if b > a)


def test_candidate_at_fitted_mean_is_accepted(rng):
    data = setting_c(rng, 40)
    X = expand_design(data.xs, GAUSS).features
    mu = float(np.array([1.0, 0.5]) @ np.linalg.lstsq(X, data.y, rcond=None)[0])
    rc = ResidualConformal(data, GAUSS, 0.1, grid_points=101, window=(mu - 1.0, mu + 1.0))
    assert rc.grid[50] == pytest.approx(mu)
    assert rc.ranks([0.5])[50] == 1
    assert rc.ranks([0.5], weighted=True)[50] == 1
    assert mu in rc.ls([0.5]) and mu in rc.lslw([0.5])


def test_constant_weights_preserve_ranks(rng):
    data = Dataset(np.zeros((25, 0)), rng.normal(size=25))
    rc = ResidualConformal(data, GAUSS, 0.1)
    np.testing.assert_array_equal(rc.ranks([]), rc.ranks([], weighted=True))


def test_constant_dispersion_fit_gives_ls_region(rng):
    # an intercept-only dispersion model is constant in x, so ranks and regions agree
    data = Dataset(np.zeros((60, 0)), rng.normal(size=60))
    rc = ResidualConformal(data, GAUSS, 0.1)
    assert rc.ls([]) == rc.lslw([])


def test_residual_errors(rng):
    data = setting_c(rng, 20)
    with pytest.raises(ValueError):
        ResidualConformal(data, ModelSpec("gamma"), 0.1)
    flat = Dataset(np.full(20, 0.5), rng.normal(size=20))
    with pytest.raises(np.linalg.LinAlgError):
        ls_region(flat, GAUSS, [0.5], 0.1)


def test_residual_permutation_invariance(rng):
    data = setting_c(rng, 50)
    a = ResidualConformal(data, GAUSS, 0.1)
    b = ResidualConformal(data.permuted(rng.permutation(50)), GAUSS, 0.1)
    for x in (0.2, 0.6):
        assert a.ls([x]) == b.ls([x]) and a.lslw([x]) == b.lslw([x])
