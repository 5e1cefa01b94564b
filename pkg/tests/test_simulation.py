import numpy as np
import pytest
from scipy import stats

from glmconformal import simulation
from glmconformal.simulation import SeedSpec, SimSetting, draw, generate, make_setting, run_study


def test_presets():
    a, b, c = make_setting("A"), make_setting("B"), make_setting("c")
    assert a.true_beta == (1.25, -1.0) and a.shape == 2.0 and a.fit_specs["trans"].family == "gamma"
    assert b.true_beta == (0.5, 1.0) and b.fit_specs["bin"].degree == 3
    assert c.true_beta == (2.0, 5.0) and c.sigma2 == 1.0 and c.fit_specs["ls"].degree == 1
    assert a.fit_specs["ls"].degree == 3


def test_setting_validation():
    with pytest.raises(ValueError):
        make_setting("D")
    with pytest.raises(ValueError):
        make_setting("A", shape=-1.0)
    with pytest.raises(ValueError):
        make_setting("C", sigma2=0.0)
    with pytest.raises(ValueError):
        SimSetting("A", 150, (0.5, -1.0), shape=2.0)


def test_mean_functions():
    b0, b1 = make_setting("C").true_beta
    assert b0 + b1 * 0.5 == 4.5
    b0, b1 = make_setting("A").true_beta
    assert 1 / (b0 + b1 * 0.0) == 0.8


def test_generate_shapes_and_determinism():
    s = make_setting("A", n=50)
    d1, d2 = generate(s, SeedSpec(7, 3)), generate(s, SeedSpec(7, 3))
    assert d1.xs.shape == (50, 1) and np.all((d1.xs >= 0) & (d1.xs <= 1)) and np.all(d1.y > 0)
    np.testing.assert_array_equal(d1.y, d2.y)
    assert not np.array_equal(generate(s, SeedSpec(7, 4)).y, d1.y)


def test_gamma_stratum_mean():
    s = make_setting("A", shape=2.0)
    d = draw(s, 100_000, SeedSpec(11, 0).rng())
    x = d.xs[:, 0]
    y = d.y[(x >= 0.45) & (x <= 0.55)]
    se = np.std(y, ddof=1) / np.sqrt(y.size)
    assert abs(y.mean() - 1 / (1.25 - 0.5)) < 3 * se


def test_generator_marginals():
    s = make_setting("C")
    d = draw(s, 100_000, SeedSpec(5, 0).rng())
    x = d.xs[:, 0]
    assert stats.kstest(x, "uniform").pvalue > 1e-3
    resid = (d.y - (2 + 5 * x)) / np.sqrt(s.sigma2)
    assert stats.kstest(resid, "norm").pvalue > 1e-3


def test_smoke_single_method():
    res = run_study(make_setting("C"), ["hd"], reps=1, master_seed=3)
    assert list(res.reports) == ["hd"]
    rep = res.reports["hd"]
    assert np.isfinite([rep.marginal_coverage, rep.mean_area, rep.prediction_error]).all()
    assert res.skipped == 0


def test_study_determinism_and_independence():
    s = make_setting("C", n=60)
    r1 = run_study(s, ["trans", "ls"], reps=3, master_seed=9)
    r2 = run_study(s, ["trans", "ls"], reps=3, master_seed=9)
    assert r1.reports == r2.reports
    r3 = run_study(s, ["trans", "ls"], reps=2, master_seed=9)
    assert r3.replications["trans"] == r1.replications["trans"][:2]


def test_parallel_matches_serial():
    s = make_setting("C", n=40)
    a = run_study(s, ["hd", "bin"], reps=3, master_seed=2, workers=1)
    b = run_study(s, ["hd", "bin"], reps=3, master_seed=2, workers=2)
    assert a.reports == b.reports


def test_study_validation():
    s = make_setting("C")
    with pytest.raises(ValueError):
        run_study(s, ["hd"], reps=0)
    with pytest.raises(ValueError, match="valid methods"):
        run_study(s, ["nope"], reps=1)


def test_failed_replications_are_skipped(monkeypatch):
    real = simulation.replication_reports

    def flaky(setting, methods, alpha, seed, **kw):
        if seed.index == 1:
            raise ArithmeticError("boom")
        return real(setting, methods, alpha, seed, **kw)

    monkeypatch.setattr(simulation, "replication_reports", flaky)
    res = run_study(make_setting("C", n=40), ["hd"], reps=3)
    assert res.skipped == 1 and len(res.replications["hd"]) == 2


def test_holdout_points():
    res = run_study(make_setting("C", n=40), ["kernel"], reps=2, holdout=25)
    assert res.reports["kernel"].n_points == 50


def test_gamma_setting_runs():
    res = run_study(make_setting("A", n=30), ["trans", "bin", "hd"], reps=1, master_seed=4,
                    precision=0.02)
    for rep in res.reports.values():
        assert 0.5 < rep.marginal_coverage <= 1.0 and rep.mean_area > 0
