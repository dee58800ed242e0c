import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from soymat.metrics import MetricsReport, mae, mse, r2, regression_metrics

finite = st.floats(-200, 200, allow_nan=False)


@given(arrays(np.float64, st.integers(1, 40), elements=finite), st.data())
def test_mae_at_most_root_mse(pred, data):
    gt = data.draw(arrays(np.float64, pred.shape, elements=finite))
    assert mae(pred, gt) <= math.sqrt(mse(pred, gt)) * (1 + 1e-12) + 1e-12


def test_worked_values():
    pred, gt = [1.0, 2.0, 5.0], [1.0, 4.0, 2.0]
    assert mae(pred, gt) == pytest.approx(5 / 3)
    assert mse(pred, gt) == pytest.approx(13 / 3)
    # ss_tot about mean 7/3: (16+25+1)/9 = 42/9
    assert r2(pred, gt) == pytest.approx(1 - 13 / (42 / 9))


def test_r2_perfect_and_mean_predictor():
    gt = np.array([3.0, 7.0, 10.0, 11.0])
    assert r2(gt, gt) == 1.0
    assert r2(np.full(4, gt.mean()), gt) == pytest.approx(0.0, abs=1e-15)
    assert r2(gt[::-1], gt) < 0


def test_r2_undefined_flagged():
    value, flag = r2([1.0, 2.0], [5.0, 5.0], return_flag=True)
    assert flag and math.isnan(value)
    assert r2([1.0, 2.0], [1.0, 2.0], return_flag=True) == (1.0, False)
    with pytest.raises(ValueError):
        r2([1.0], [1.0])


def test_length_mismatch():
    with pytest.raises(ValueError, match="mismatch"):
        mae([1, 2], [1, 2, 3])


def test_report_rows_and_csv(tmp_path):
    rep = MetricsReport().add("e1", "weekly", "loess", "test", [1, 2, 3], [1, 2, 4])
    rep.add("e1", "weekly", "loess", "train", [1], [1])
    row = rep.get("e1", "weekly", "loess", "test")
    assert (row.mae, row.n) == (pytest.approx(1 / 3), 3)
    assert math.isnan(rep.get("e1", "weekly", "loess", "train").r2)
    lines = open(rep.to_csv(tmp_path / "m.csv")).read().splitlines()
    assert lines[0] == "environment,schedule,method,partition,r2,mae,mse,n"
    assert lines[2].split(",")[4] == "nan"
    assert regression_metrics([0, 2], [1, 1])["mse"] == 1.0
    with pytest.raises(KeyError):
        rep.get("e2", "weekly", "loess", "test")
