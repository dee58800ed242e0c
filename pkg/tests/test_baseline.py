import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import lowess_oracle

from soymat.baseline import (GRID_THRESHOLDS, GliSeries, ThresholdGrid, closest_day, gli, interpolate_daily, lowess,
                             predict_maturity_loess, threshold_grid_search, window_size)
from soymat.ingest import PlotSeries, PlotSnip
from soymat.synthetic import render_plot


def test_lowess_matches_brute_force_oracle():
    rng = np.random.default_rng(42)
    x = np.sort(rng.uniform(0, 10, 50))
    y = np.sin(x) + rng.normal(0, 0.3, 50)
    y[[5, 20, 33]] += 3.0  # outliers exercise the robustness weights
    got = lowess(x, y, 0.67, 3)
    want = lowess_oracle(x, y, 0.67, 3)
    assert np.max(np.abs(got - want)) < 1e-8


@pytest.mark.parametrize("frac,iters", [(0.3, 0), (0.5, 2), (1.0, 1)])
def test_lowess_oracle_other_settings(frac, iters):
    rng = np.random.default_rng(7)
    x = rng.permutation(np.arange(30.0))  # unsorted input
    y = 0.1 * x + rng.normal(0, 1, 30)
    assert np.max(np.abs(lowess(x, y, frac, iters) - lowess_oracle(x, y, frac, iters))) < 1e-8


def test_lowess_cross_check_statsmodels():
    sm = pytest.importorskip("statsmodels.nonparametric.smoothers_lowess")
    rng = np.random.default_rng(3)
    x = np.sort(rng.uniform(0, 10, 40))
    y = np.cos(x) + rng.normal(0, 0.2, 40)
    # statsmodels floors frac * n for its window; 0.5 * 40 is whole, so both agree
    for iters in (0, 3):
        ref = sm.lowess(y, x, frac=0.5, it=iters, delta=0.0, return_sorted=False)
        assert np.max(np.abs(lowess(x, y, 0.5, iters) - ref)) < 1e-8


@settings(max_examples=40)
@given(a=st.floats(-5, 5), b=st.floats(-2, 2), n=st.integers(3, 30), frac=st.floats(0.2, 1.0),
       iters=st.integers(0, 3))
def test_lowess_exact_on_lines(a, b, n, frac, iters):
    x = np.arange(n, dtype=float) * 1.7
    y = a + b * x
    assert np.max(np.abs(lowess(x, y, frac, iters) - y)) < 1e-10


def test_lowess_constant_and_errors():
    x = np.array([6.0, 13, 20, 27, 37])
    assert np.allclose(lowess(x, np.full(5, 0.2)), 0.2)
    with pytest.raises(ValueError):
        lowess([1, 1], [2, 3])
    with pytest.raises(ValueError):
        lowess([1, 2], [2, 3], frac=0)
    assert window_size(5, 0.67) == 4
    assert window_size(3, 0.1) == 2


def test_gli_examples():
    assert gli(np.full((2, 2, 3), 80)) == 0.0
    assert gli(np.array([[[0, 255, 0]]])) == 1.0
    img = np.array([[[100, 150, 50]]])
    assert gli(img) == pytest.approx(150 / 450, abs=1e-12)
    assert gli(np.zeros((2, 2, 3)), return_flag=True) == (0.0, True)


@given(st.tuples(st.floats(1, 255), st.floats(1, 255), st.floats(1, 255)), st.floats(0.1, 10))
def test_gli_scale_invariant(rgb, k):
    img = np.array([[rgb]])
    assert gli(img * k) == pytest.approx(gli(img), abs=1e-12)


def test_interpolate_daily_examples():
    grid, v = interpolate_daily([6, 20], [0.3, 0.1])
    assert v[grid == 13][0] == pytest.approx(0.2)
    grid, v = interpolate_daily([6, 13, 20], [0.3, 0.18, 0.1])
    assert v[grid == 16][0] == pytest.approx(0.18 + (3 / 7) * (0.1 - 0.18), abs=1e-15)
    assert round(v[grid == 16][0], 4) == 0.1457
    assert v[grid == 13][0] == 0.18
    assert grid[0] == 6 and grid[-1] == 20 and len(grid) == 15


def test_closest_day_ties_and_censoring():
    grid = np.arange(5)
    assert closest_day(grid, np.array([0.3, 0.1, -0.1, -0.2, -0.3]), 0.0) == (1, False)
    assert closest_day(grid, np.array([0.5, 0.4, 0.3, 0.2, 0.1]), 0.02) == (4, True)
    assert closest_day(grid, np.array([-0.1, -0.2, -0.3, -0.4, -0.5]), 0.02) == (0, True)


def _series_from_gli(values, days, pid="p", env="e", rm=None):
    snips = []
    for g, d in zip(values, days):
        img, _ = render_plot(g, 64, 256, 0.0, None)
        snips.append(PlotSnip(pid, d, img, env))
    return PlotSeries(pid, env, snips, rm)


def test_noiseless_synthetic_plot_recovers_maturity(small_series):
    for s in small_series:
        p = predict_maturity_loess(s, 0.02)
        assert p.rm_day == s.rm_day and not p.censored


def test_prediction_monotone_in_threshold():
    days = [6, 13, 20, 27, 37]
    s = GliSeries("p", days, [0.3, 0.22, 0.08, -0.05, -0.2])
    preds = [predict_maturity_loess(s, t).rm_day for t in np.linspace(-0.15, 0.25, 30)]
    assert all(a >= b for a, b in zip(preds, preds[1:]))


def test_censored_when_threshold_not_reached():
    s = GliSeries("p", [6, 13, 20, 27, 37], [0.35, 0.33, 0.3, 0.28, 0.26])
    p = predict_maturity_loess(s, 0.02)
    assert p.rm_day == 37 and p.censored


def test_grid_search_on_noiseless_environment(small_series):
    grid = threshold_grid_search(small_series)
    assert grid.thresholds == GRID_THRESHOLDS and len(grid.thresholds) == 9
    env = small_series[0].environment_id
    assert grid.best_threshold(env, "mae") == 0.02
    i = grid.thresholds.index(0.02)
    assert grid.table[env]["mae"][i] == 0 and grid.table[env]["r2"][i] == 1
    for e, metric, vals, best in grid.rows():
        opt = max(vals) if metric == "r2" else min(vals)
        assert vals[best] == opt
        assert best == vals.index(opt)


def test_grid_search_validation(small_series):
    with pytest.raises(ValueError):
        threshold_grid_search(small_series, [0.02, 0.01])
    unlabeled = [PlotSeries(s.plot_id, s.environment_id, s.snips, None) for s in small_series]
    with pytest.raises(ValueError):
        threshold_grid_search(unlabeled)
