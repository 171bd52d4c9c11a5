import itertools

import numpy as np
import pytest

from pdemee.bench import (analytic_relative_efficiency, efficiency_sweep, standard_estimators,
                          run_replications, simplified_relative_efficiency_mc, variance_ratio)
from pdemee.errors import ConfigError
from pdemee.estimators import EstimatorSpec, SolverConfig
from pdemee.simgen import GenerativeConfig, true_marginal_beta0

SMALL = GenerativeConfig(n=40, T=20, delta=3, seed=11)


def test_analytic_examples():
    for p, q in itertools.product((0.1, 0.5, 0.9), repeat=2):
        assert analytic_relative_efficiency(p, q, 1) == 1.0
    assert analytic_relative_efficiency(0.5, 0.5, 2) == pytest.approx(1.5, abs=1e-14)


def test_analytic_continuous_at_seam():
    near = analytic_relative_efficiency(0.19999, 0.2, 5)
    at = analytic_relative_efficiency(0.2, 0.2, 5)
    assert abs(near - at) <= 1e-3
    for q in (0.1, 0.5, 0.8):
        for delta in (2, 7):
            eps = 1e-7
            assert analytic_relative_efficiency(q + eps, q, delta) == pytest.approx(
                analytic_relative_efficiency(q, q, delta), rel=1e-5)


def test_analytic_monotone_on_grid():
    grid = np.round(np.arange(0.1, 0.91, 0.1), 10)
    for delta in range(2, 11):
        table = np.array([[analytic_relative_efficiency(p, q, delta) for q in grid] for p in grid])
        assert np.all(np.diff(table, axis=0) >= -1e-12)
        assert np.all(np.diff(table, axis=1) >= -1e-12)
    for p, q in itertools.product(grid, repeat=2):
        vals = [analytic_relative_efficiency(p, q, d) for d in range(1, 11)]
        assert np.all(np.diff(vals) >= -1e-12)


def test_analytic_rejects_bad_input():
    with pytest.raises(ConfigError):
        analytic_relative_efficiency(0.0, 0.5, 2)
    with pytest.raises(ConfigError):
        analytic_relative_efficiency(0.5, 0.5, 0)


def test_simplified_monte_carlo_within_five_percent():
    re, se = simplified_relative_efficiency_mc(0.5, 0.5, 2, n=500, reps=5000, seed=2)
    assert abs(re / 1.5 - 1) <= 0.05
    assert se < 0.05


def test_variance_ratio_jackknife_matches_loop():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=40), rng.normal(scale=0.5, size=40)
    ratio, se = variance_ratio(x, y)
    assert ratio == pytest.approx(x.var(ddof=1) / y.var(ddof=1))
    loo = np.array([np.delete(x, i).var(ddof=1) / np.delete(y, i).var(ddof=1) for i in range(40)])
    assert se == pytest.approx(np.sqrt(39 / 40 * np.sum((loo - loo.mean()) ** 2)), rel=1e-10)


def test_report_metrics_consistent():
    report = run_replications(SMALL, standard_estimators(), 12)
    assert report.replications == 12 and sum(report.failed.values()) == 0
    for rec in report.records:
        assert rec["RMSE"] ** 2 == pytest.approx(rec["Bias"] ** 2 + rec["SD"] ** 2, abs=1e-10)
        assert 0 <= rec["CP.unadj"] <= 1 and 0 <= rec["CP.adj"] <= 1
        assert rec["CP.adj"] >= rec["CP.unadj"]
    assert report.record("pd-EMEE S=1", "beta0")["true"] == pytest.approx(true_marginal_beta0(SMALL))


def test_single_replication_has_no_sd():
    report = run_replications(SMALL, standard_estimators()[:1], 1)
    rec = report.records[0]
    assert rec["SD"] is None and rec["Bias"] is not None


def test_report_deterministic_and_worker_independent():
    specs = standard_estimators()[:2]
    a = run_replications(SMALL, specs, 6)
    b = run_replications(SMALL, specs, 6)
    c = run_replications(SMALL, specs, 6, threads=2)
    assert a.records == b.records == c.records
    for k in a.estimates:
        assert np.array_equal(a.estimates[k], c.estimates[k])


def test_failed_fits_are_counted_and_warned():
    bad = EstimatorSpec(control_cols=(0, 1), solver=SolverConfig(max_iter=1, tol=1e-15),
                        label="starved")
    good = EstimatorSpec(control_cols=(0, 1), label="ok")
    with pytest.warns(RuntimeWarning, match="starved"):
        report = run_replications(SMALL, [good, bad], 4)
    assert report.failed == {"ok": 0, "starved": 4}
    assert report.record("starved", "beta0")["n_ok"] == 0
    assert np.all(np.isnan(report.estimates["starved"]))


def test_moderated_truth_defaults():
    report = run_replications(SMALL, standard_estimators(moderated=True)[:1], 2)
    truths = [r["true"] for r in report.records]
    assert truths == [0.1, 0.2]


def test_sweep_unit_points():
    curve = efficiency_sweep("Delta", [1], SMALL, 5)
    assert curve.points[0][1] == pytest.approx(1.0, abs=1e-12)
    curve = efficiency_sweep("K", [0], SMALL, 5)
    assert curve.points[0][1] == pytest.approx(1.0, abs=1e-12)
    assert all(r["rel_eff"] > 0 for r in curve.to_rows())


def test_sweep_rejects_empty_grid_and_bad_axis():
    with pytest.raises(ConfigError):
        efficiency_sweep("Delta", [], SMALL, 5)
    with pytest.raises(ConfigError):
        efficiency_sweep("gamma", [0.5], SMALL, 5)
