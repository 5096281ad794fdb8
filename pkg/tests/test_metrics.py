import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import suites
from a2clnet.errors import DomainError, ShapeError
from a2clnet.metrics import EvalReport, mae, mape, mape_fraction, r_squared


def test_hand_examples():
    assert mape([100.0], [98.0]) == 2.0
    assert mape_fraction([100.0], [98.0]) == pytest.approx(0.02, abs=1e-17)
    assert mae([1.0, 2.0, 3.0], [2.0, 2.0, 1.0]) == 1.0
    assert r_squared([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    assert r_squared([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]) == 0.0


def test_metrics_match_oracles():
    worst = suites.metric_oracle_errors()
    assert max(worst.values()) < 1e-12, worst


@settings(max_examples=100)
@given(st.lists(st.floats(1, 1e4), min_size=2, max_size=30), st.floats(-100, 100))
def test_invariants(y, shift):
    y = np.array(y)
    yhat = y + shift
    assert mape(y, y) == 0.0 and mae(y, y) == 0.0
    assert mae(y, yhat) == pytest.approx(abs(shift), rel=1e-9, abs=1e-9)
    assert mae(y, yhat) == pytest.approx(mae(yhat, y))
    assert mape(y, yhat) >= 0
    if np.ptp(y) > 0:
        assert r_squared(y, yhat) <= 1.0
        # predicting the mean gives zero explained variance
        assert r_squared(y, np.full_like(y, y.mean())) == pytest.approx(0.0, abs=1e-9)


def test_errors():
    with pytest.raises(DomainError):
        mape([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(DomainError):
        r_squared([2.0, 2.0], [1.0, 3.0])
    with pytest.raises(DomainError):
        r_squared([1.0], [1.0])
    with pytest.raises(ShapeError):
        mae([1.0, 2.0], [1.0])
    with pytest.raises(DomainError):
        mae([], [])


def test_eval_report_serialization():
    rep = EvalReport.compute([100.0, 200.0], [98.0, 210.0], keep_residuals=True)
    assert set(json.loads(rep.to_json())) == {"r2", "mape_percent", "mae", "n"}
    assert rep.n == 2 and rep.mape_percent == pytest.approx(3.5)
    np.testing.assert_array_equal(rep.residuals, [-2.0, 10.0])
    lines = rep.to_csv("A2CLNet").splitlines()
    assert lines[0] == "model,R2,MAPE,MAE" and lines[1].startswith("A2CLNet,")
