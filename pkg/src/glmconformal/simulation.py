"""Simulation settings A/B/C and the Monte Carlo study driver."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .baselines import KernelConformal, ResidualConformal
from .diagnostics import average_reports, evaluate
from .engine import ConformalConfig
from .glm import Dataset, ModelSpec
from .parametric import BinPartition, ParametricConformal, default_bins

log = logging.getLogger(__name__)

METHODS = ("trans", "bin", "kernel", "ls", "lslw", "hd")

_BETAS = {"A": (1.25, -1.0), "B": (0.5, 1.0), "C": (2.0, 5.0)}
_DEFAULT_SHAPE = {"A": 2.0, "B": 10.0}


@dataclass(frozen=True)
class SimSetting:
    id: str
    n: int
    true_beta: tuple
    shape: float | None = None
    sigma2: float | None = None
    fit_specs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id not in _BETAS:
            raise ValueError(f"unknown setting {self.id!r}; expected A, B or C")
        if self.n < 5:
            raise ValueError("n must be at least 5")
        b0, b1 = self.true_beta
        if self.id in ("A", "B"):
            if not (self.shape is not None and self.shape > 0):
                raise ValueError("gamma settings need a positive shape")
            if not (b0 > 0 and b0 + b1 > 0):
                raise ValueError("x'beta must be positive on [0, 1]")
        elif not (self.sigma2 is not None and self.sigma2 > 0):
            raise ValueError("setting C needs a positive sigma2")


def make_setting(setting_id: str, n: int = 150, shape: float | None = None,
                 sigma2: float = 1.0) -> SimSetting:
    """Preset with the per-method fitted model specs.

    A fits the correct gamma model for the parametric and HD regions and a
    cubic least-squares mean for LS/LSLW; B fits a cubic Gaussian model
    everywhere; C fits simple linear regression everywhere.
    """
    setting_id = setting_id.upper()
    if setting_id not in _BETAS:
        raise ValueError(f"unknown setting {setting_id!r}; expected A, B or C")
    cubic = ModelSpec("gaussian", degree=3)
    if setting_id == "A":
        gamma = ModelSpec("gamma", "inverse")
        specs = {"trans": gamma, "bin": gamma, "hd": gamma, "ls": cubic, "lslw": cubic}
    elif setting_id == "B":
        specs = {m: cubic for m in ("trans", "bin", "hd", "ls", "lslw")}
    else:
        specs = {m: ModelSpec("gaussian") for m in ("trans", "bin", "hd", "ls", "lslw")}
    if setting_id == "C":
        return SimSetting("C", n, _BETAS["C"], sigma2=sigma2, fit_specs=specs)
    return SimSetting(setting_id, n, _BETAS[setting_id],
                      shape=shape if shape is not None else _DEFAULT_SHAPE[setting_id], fit_specs=specs)


@dataclass(frozen=True)
class SeedSpec:
    master: int
    index: int

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.master, self.index, stream]))


def draw(setting: SimSetting, n: int, rng: np.random.Generator) -> Dataset:
    x = rng.uniform(0.0, 1.0, size=n)
    b0, b1 = setting.true_beta
    eta = b0 + b1 * x
    if setting.id == "C":
        y = eta + np.sqrt(setting.sigma2) * rng.standard_normal(n)
    else:
        nu = setting.shape
        y = rng.gamma(nu, 1.0 / (nu * eta))
    return Dataset(x[:, None], y)


def generate(setting: SimSetting, seed: SeedSpec) -> Dataset:
    """Training sample for one replication; X ~ U(0, 1)."""
    return draw(setting, setting.n, seed.rng(0))


@dataclass
class StudyResult:
    reports: dict
    replications: dict
    skipped: int = 0


def replication_reports(setting: SimSetting, methods, alpha: float, seed: SeedSpec,
                        precision: float = 0.005, bins: int | None = None,
                        grid_points: int = 100, holdout: int = 0) -> dict:
    """Regions for every method on one generated sample, with diagnostics.

    Regions are evaluated at the training points against the training
    responses, or at ``holdout`` fresh draws when ``holdout > 0``.
    """
    data = generate(setting, seed)
    test = draw(setting, holdout, seed.rng(1)) if holdout > 0 else data
    config = ConformalConfig(alpha=alpha, precision=precision)
    partition = BinPartition(1, bins if bins is not None else default_bins(setting.n))
    out = {}
    for method in methods:
        if method in ("trans", "bin", "hd"):
            pc = ParametricConformal(data, setting.fit_specs[method], config, partition)
            fn = {"trans": pc.transform, "bin": pc.binned, "hd": pc.hd}[method]
        elif method == "kernel":
            fn = KernelConformal(data, partition, config).region
        elif method in ("ls", "lslw"):
            rc = ResidualConformal(data, setting.fit_specs[method], alpha, grid_points,
                                   window=config.window(data.y))
            fn = rc.ls if method == "ls" else rc.lslw
        else:
            raise ValueError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")
        regions = [fn(x) for x in test.xs]
        out[method] = evaluate(method, regions, test.y, test.xs, partition)
    return out


def _safe_replication(index, setting, methods, alpha, master_seed, kwargs):
    try:
        return replication_reports(setting, methods, alpha, SeedSpec(master_seed, index), **kwargs)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.warning("replication %d failed: %s", index, exc)
        return None


def run_study(setting: SimSetting, methods=METHODS, reps: int = 250, alpha: float = 0.1,
              master_seed: int = 0, workers: int = 1, **kwargs) -> StudyResult:
    """Monte Carlo study; per-method diagnostics averaged over replications.

    Replication ``r`` depends only on ``(master_seed, r)``, so the result is
    identical for any ``workers``.  Failed replications are skipped and
    counted.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; valid methods: {', '.join(METHODS)}")
    job = partial(_safe_replication, setting=setting, methods=methods, alpha=alpha,
                  master_seed=master_seed, kwargs=kwargs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(reps)))
    else:
        results = [job(r) for r in range(reps)]
    done = [r for r in results if r is not None]
    skipped = reps - len(done)
    if not done:
        raise RuntimeError("every replication failed")
    replications = {m: [r[m] for r in done] for m in methods}
    reports = {m: average_reports(replications[m]) for m in methods}
    return StudyResult(reports, replications, skipped)
