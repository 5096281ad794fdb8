import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_architecture
from gradcheck import max_rel_error, numerical_grad
from a2clnet.dataio import NormStats, WindowedDataset
from a2clnet.errors import ConfigurationError, DomainError, TrainingDiverged
from a2clnet.model import build
from a2clnet.tensor import Rng
from a2clnet.training import (
    SGD,
    Adam,
    HyperParams,
    LossMetric,
    TrainReport,
    clip_by_global_norm,
    cross_entropy_loss,
    loss,
    mape_loss,
    mse_loss,
    train,
)


def linear_dataset(n=64, lookback=6, seed=0):
    """Targets are an affine function of the last two inputs."""
    r = np.random.default_rng(seed)
    X = r.uniform(size=(n, lookback, 1))
    y = 0.6 * X[:, -1, 0] + 0.3 * X[:, -2, 0] + 0.05
    n_train = (3 * n) // 4
    stats = NormStats(["load"], np.array([100.0]), np.array([500.0]))
    return WindowedDataset(X, y, stats, np.arange(n_train), np.arange(n_train, n), np.arange(0), 0, lookback)


@pytest.fixture(scope="module")
def data():
    return linear_dataset()


# --------------------------------------------------------------------------
# losses


def test_loss_hand_values():
    assert mse_loss([1.0, 2.0], [1.0, 2.0])[0] == 0.0
    assert mape_loss([3.0], [3.0])[0] == 0.0
    assert mse_loss([1.0, 3.0], [0.0, 0.0])[0] == 5.0
    assert mape_loss([98.0], [100.0])[0] == pytest.approx(0.02, abs=1e-15)
    assert cross_entropy_loss([0.5], [1.0])[0] == pytest.approx(math.log(2))


@pytest.mark.parametrize("metric", list(LossMetric))
def test_loss_gradients_match_finite_differences(metric, np_rng):
    pred = np_rng.uniform(0.1, 0.9, size=7)
    target = np_rng.uniform(0.05, 0.95, size=7)
    _, g = loss(pred, target, metric)
    num = numerical_grad(lambda: loss(pred, target, metric)[0], pred)
    assert max_rel_error(g, num) < 1e-6


def test_loss_domain_errors():
    with pytest.raises(DomainError):
        mape_loss([1.0, 2.0], [1.0, 0.0])
    with pytest.raises(DomainError):
        cross_entropy_loss([1.0], [0.5])
    with pytest.raises(DomainError):
        cross_entropy_loss([0.5], [1.5])
    with pytest.raises(ConfigurationError):
        mse_loss([1.0], [1.0, 2.0])


def test_hyperparams_ranges_and_round_trip():
    hp = HyperParams(learning_rate=0.01, batch_size=16, epochs=200, init_scheme="He", loss_metric="MAPE")
    assert HyperParams.from_dict(json.loads(json.dumps(hp.to_dict()))) == hp
    for bad in (dict(learning_rate=0.5), dict(batch_size=0), dict(epochs=99), dict(loss_metric="Huber")):
        with pytest.raises(ConfigurationError):
            HyperParams(**bad)


# --------------------------------------------------------------------------
# optimizers


def test_adam_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0, -1.0])}
    Adam(0.1).step(params, {"w": np.array([3.0, -0.001])})
    np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-6)


def test_sgd_step():
    params = {"w": np.array([1.0])}
    SGD(0.5).step(params, {"w": np.array([2.0])})
    assert params["w"][0] == 0.0


def test_clip_by_global_norm():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_by_global_norm(grads, 1.0) == 5.0
    np.testing.assert_allclose([grads["a"][0], grads["b"][0]], [0.6, 0.8])


# --------------------------------------------------------------------------
# training loop


def test_zero_learning_rate_leaves_parameters_unchanged(data):
    m = build(tiny_architecture(), "Xavier", Rng(0))
    before = {k: v.copy() for k, v in m.params.items()}
    train(m, data, HyperParams.unchecked(learning_rate=0.0, batch_size=8, epochs=3), Rng(1))
    assert all(np.array_equal(before[k], m.params[k]) for k in before)


def test_linear_data_is_learned(data):
    m = build(tiny_architecture(dropout_rate=0.0), "Xavier", Rng(0))
    rep = train(m, data, HyperParams(learning_rate=0.01, batch_size=8, epochs=200), Rng(1))
    assert rep.epochs_run == 200
    assert rep.train_loss[-1] < 0.01 * rep.train_loss[0]
    assert rep.final_train_loss < 0.01 * rep.train_loss[0]


def test_identical_seeds_identical_reports(data):
    hp = HyperParams(learning_rate=0.01, batch_size=8, epochs=100)
    reports = []
    for _ in range(2):
        m = build(tiny_architecture(), "Xavier", Rng(3))
        reports.append(train(m, data, hp, Rng(4), epoch_budget=4))
    a, b = (r.to_dict(include_timing=False) for r in reports)
    assert a == b
    m = build(tiny_architecture(), "Xavier", Rng(3))
    assert train(m, data, hp, Rng(5), epoch_budget=4).train_loss != reports[0].train_loss


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 60), st.integers(1, 3))
def test_step_accounting(batch, epochs):
    ds = linear_dataset(n=40)
    m = build(tiny_architecture(), "Xavier", Rng(0))
    rep = train(m, ds, HyperParams(batch_size=batch), Rng(0), epoch_budget=epochs)
    assert rep.steps == epochs * math.ceil(30 / batch)
    assert len(rep.train_loss) == len(rep.val_loss) == epochs


def test_batch_gradient_is_mean_of_per_example_gradients(data):
    m = build(tiny_architecture(dropout_rate=0.0), "He", Rng(2))
    X, y = data.train
    X, y = X[:10], y[:10]
    pred, cache = m.forward_with_cache(X)
    batch = m.backward(mse_loss(pred, y)[1], cache)
    per = []
    for i in range(10):
        p, c = m.forward_with_cache(X[i : i + 1])
        per.append(m.backward(mse_loss(p, y[i : i + 1])[1], c))
    for k in batch:
        mean = np.mean([g[k] for g in per], axis=0)
        assert np.abs(batch[k] - mean).max() < 1e-10, k


def test_small_step_reduces_frozen_batch_loss(data):
    m = build(tiny_architecture(dropout_rate=0.0), "Xavier", Rng(6))
    X, y = data.train
    pred, cache = m.forward_with_cache(X)
    before, dpred = mse_loss(pred, y)
    grads = m.backward(dpred, cache)
    SGD(1e-4).step(m.params, grads)
    assert mse_loss(m.forward(X), y)[0] < before


def test_mape_training_decreases_loss(data):
    m = build(tiny_architecture(dropout_rate=0.0), "Xavier", Rng(0))
    rep = train(m, data, HyperParams(learning_rate=0.01, batch_size=8, loss_metric="MAPE"), Rng(1),
                epoch_budget=20)
    assert rep.train_loss[-1] < rep.train_loss[0]


def test_cross_entropy_needs_sigmoid_head(data):
    hp = HyperParams(loss_metric="CrossEntropy")
    with pytest.raises(ConfigurationError):
        train(build(tiny_architecture(), "Xavier", Rng(0)), data, hp, Rng(0), epoch_budget=1)
    m = build(tiny_architecture(), "Xavier", Rng(0), head_activation="sigmoid")
    rep = train(m, data, hp, Rng(0), epoch_budget=2)
    assert all(np.isfinite(rep.train_loss))


def test_nan_aborts_naming_the_layer(data):
    m = build(tiny_architecture(), "Xavier", Rng(0))
    m.params["attn.W_V"][0, 0, 0] = np.nan
    with pytest.raises(TrainingDiverged, match="attn") as info:
        train(m, data, HyperParams(), Rng(0), epoch_budget=1)
    assert "attn" in info.value.where


def test_report_serialization(data):
    m = build(tiny_architecture(), "Xavier", Rng(0))
    rep = train(m, data, HyperParams(batch_size=16), Rng(0), epoch_budget=3)
    doc = json.loads(rep.to_json())
    assert doc["hyperparams"]["batch_size"] == 16
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 4
    assert isinstance(rep, TrainReport) and len(rep.checksum) == 64
    assert m.hyperparams == rep.hyperparams and m.normalization["maxs"] == [500.0]
