"""Reusable check suites shared by the unit tests and the acceptance report.

Each suite returns ``{case_name: worst_error}`` so callers can both assert
per case and print a one-line summary.
"""

import zlib

import numpy as np

import oracles
from gradcheck import max_rel_error, numerical_grad

from a2clnet import layers as L
from a2clnet.model import ArchitectureConfig, build
from a2clnet.tensor import Rng


def _check(name, out, forward, backward, wrt, results):
    """Compare analytic and numerical gradients of ``sum(R * forward())``."""
    rs = np.random.default_rng(zlib.crc32(name.encode()))
    R = rs.normal(size=np.shape(out))
    grads = backward(R)
    f = lambda: float((forward() * R).sum())  # noqa: E731
    for key, arr in wrt.items():
        results[f"{name}.{key}"] = max_rel_error(grads[key], numerical_grad(f, arr))


def layer_gradient_suite(seed=0):
    r = np.random.default_rng(seed)
    out = {}
    B, T, C = 2, 7, 3
    x = r.normal(size=(B, T, C))

    for stride in (1, 2):
        cp = L.Conv1DParams(r.normal(size=(4, C, 3)), r.normal(size=4), stride=stride)
        y, cache = L.conv1d_forward(x, cp)

        def bwd(R, cache=cache):
            g = L.conv1d_backward(R, cache)
            return {"x": g.dx, **g.params}

        _check(f"conv1d[s={stride}]", y, lambda cp=cp: L.conv1d_forward(x, cp)[0], bwd,
               {"x": x, "filters": cp.filters, "bias": cp.bias}, out)

    # distinct values so the max is never tied under a 1e-5 perturbation
    xp = r.permutation(B * T * C).reshape(B, T, C) * 0.1
    y, cache = L.maxpool1d_forward(xp, 2, 2)
    _check("maxpool", y, lambda: L.maxpool1d_forward(xp, 2, 2)[0],
           lambda R: {"x": L.maxpool1d_backward(R, cache).dx}, {"x": xp}, out)

    x2 = r.normal(size=(4, C))
    W, b = r.normal(size=(3, C)), r.normal(size=3)
    for act in ("linear", "tanh", "sigmoid", "relu"):
        y, cache = L.dense_forward(x2, W, b, act)

        def bwd(R, cache=cache):
            g = L.dense_backward(R, cache)
            return {"x": g.dx, **g.params}

        _check(f"dense[{act}]", y, lambda act=act: L.dense_forward(x2, W, b, act)[0], bwd,
               {"x": x2, "weights": W, "bias": b}, out)

    ln = L.LayerNormParams(r.normal(size=C), r.normal(size=C))
    y, cache = L.layernorm_forward(x, ln)

    def ln_bwd(R):
        g = L.layernorm_backward(R, cache)
        return {"x": g.dx, **g.params}

    _check("layernorm", y, lambda: L.layernorm_forward(x, ln)[0], ln_bwd,
           {"x": x, "gain": ln.gain, "shift": ln.shift}, out)

    # dropout with a fixed mask: replay the same Rng so the mask never changes
    y, mask = L.dropout_forward(x, 0.3, L.TRAIN, Rng(5))
    _check("dropout", y, lambda: L.dropout_forward(x, 0.3, L.TRAIN, Rng(5))[0],
           lambda R: {"x": L.dropout_backward(R, mask).dx}, {"x": x}, out)

    # LSTM cell unrolled over three steps, gradients through the whole chain
    H = 3
    lp = L.LSTMParams(r.normal(size=(4 * H, H + C)) * 0.5, r.normal(size=4 * H) * 0.5)
    h0, c0 = r.normal(size=(B, H)) * 0.5, r.normal(size=(B, H)) * 0.5
    xs = x[:, :3].copy()  # contiguous, so in-place perturbation reaches it

    def cell_chain():
        state, caches = L.LSTMState(h0, c0), []
        hs = []
        for t in range(3):
            state, cache = L.lstm_cell_forward(xs[:, t], state, lp)
            caches.append(cache)
            hs.append(state.h)
        return np.stack(hs, axis=1), caches

    y, caches = cell_chain()

    def cell_bwd(R):
        dW, db, dx = np.zeros_like(lp.W), np.zeros_like(lp.b), np.zeros_like(xs)
        dh_next, dc_next = np.zeros((B, H)), np.zeros((B, H))
        for t in reversed(range(3)):
            g, dh_next, dc_next = L.lstm_cell_backward(R[:, t] + dh_next, dc_next, caches[t])
            dW += g.params["W"]
            db += g.params["b"]
            dx[:, t] = g.dx
        return {"x": dx, "W": dW, "b": db, "h0": dh_next, "c0": dc_next}

    _check("lstm_cell x3", y, lambda: cell_chain()[0], cell_bwd,
           {"x": xs, "W": lp.W, "b": lp.b, "h0": h0, "c0": c0}, out)

    for reverse in (False, True):
        y, cache = L.lstm_forward(x, lp, reverse=reverse)

        def bwd(R, cache=cache):
            g = L.lstm_backward(R, cache)
            return {"x": g.dx, **g.params}

        _check(f"lstm[rev={reverse}]", y, lambda rv=reverse: L.lstm_forward(x, lp, reverse=rv)[0],
               bwd, {"x": x, "W": lp.W, "b": lp.b}, out)

    fw = L.LSTMParams(r.normal(size=(4 * H, H + C)) * 0.5, r.normal(size=4 * H) * 0.5)
    bw = L.LSTMParams(r.normal(size=(4 * H, H + C)) * 0.5, r.normal(size=4 * H) * 0.5)
    y, cache = L.bilstm_forward(x, fw, bw)

    def bi_bwd(R):
        g = L.bilstm_backward(R, cache)
        return {"x": g.dx, "fwd.W": g.params["fwd"]["W"], "fwd.b": g.params["fwd"]["b"],
                "bwd.W": g.params["bwd"]["W"], "bwd.b": g.params["bwd"]["b"]}

    _check("bilstm", y, lambda: L.bilstm_forward(x, fw, bw)[0], bi_bwd,
           {"x": x, "fwd.W": fw.W, "fwd.b": fw.b, "bwd.W": bw.W, "bwd.b": bw.b}, out)

    mp = L.MultiHeadAttnParams(*(r.normal(size=(2, C, 2)) for _ in range(3)), r.normal(size=(4, C)))
    y, cache = L.mha_forward(x, mp)

    def mha_bwd(R):
        g = L.mha_backward(R, cache)
        return {"x": g.dx, **g.params}

    _check("attention", y, lambda: L.mha_forward(x, mp)[0], mha_bwd,
           {"x": x, "W_Q": mp.W_Q, "W_K": mp.W_K, "W_V": mp.W_V, "W_O": mp.W_O}, out)
    return out


def model_gradient_suite(seed=0):
    """Whole assembled network (small config, inference path) vs. finite differences."""
    cfg = ArchitectureConfig(lookback_window=6, input_features=2, conv_filters=3, conv_kernel=2,
                             lstm1_hidden=2, lstm2_hidden=2, lstm3_hidden=2, attn_heads=2,
                             attn_key_dim=2, dropout_rate=0.2)
    model = build(cfg, "Xavier", Rng(seed))
    r = np.random.default_rng(seed)
    X = r.normal(size=(3, 6, 2))
    pred, cache = model.forward_with_cache(X)
    R = r.normal(size=np.shape(pred))
    grads = model.backward(R, cache)
    f = lambda: float((model.forward(X) * R).sum())  # noqa: E731
    return {f"model.{k}": max_rel_error(grads[k], numerical_grad(f, model.params[k])) for k in model.params}


# --------------------------------------------------------------------------
# forward oracles


def _rand_dims(r):
    return int(r.integers(1, 4)), int(r.integers(1, 4))


def conv_oracle_errors(n=100, seed=0):
    r = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        C, O = _rand_dims(r)
        K = int(r.integers(1, 4))
        T = int(r.integers(K, K + 6))
        stride = int(r.integers(1, 3))
        x = r.normal(size=(T, C))
        w = r.normal(size=(O, C, K))
        b = r.normal(size=O)
        got, _ = L.conv1d_forward(x, L.Conv1DParams(w, b, stride))
        want = np.array(oracles.conv1d(x.tolist(), w.tolist(), b.tolist(), stride))
        assert got.shape == want.shape
        worst = max(worst, float(np.abs(got - want).max()))
    return worst


def lstm_oracle_errors(n=100, seed=0):
    r = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        H, I = _rand_dims(r)
        Ws = [r.normal(size=(H, H + I)) for _ in range(4)]
        bs = [r.normal(size=H) for _ in range(4)]
        x, h, c = r.normal(size=I), r.normal(size=H), r.normal(size=H)
        state, _ = L.lstm_cell_forward(x, L.LSTMState(h, c), L.LSTMParams.from_gates(*Ws, *bs))
        wh, wc = oracles.lstm_cell(x.tolist(), h.tolist(), c.tolist(),
                                   *[w.tolist() for w in Ws], *[b.tolist() for b in bs])
        worst = max(worst, float(np.abs(state.h - wh).max()), float(np.abs(state.c - wc).max()))
    return worst


def attention_oracle_errors(n=100, seed=0):
    r = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        heads, dk = _rand_dims(r)
        D, T = int(r.integers(1, 5)), int(r.integers(1, 6))
        x = r.normal(size=(T, D))
        WQ, WK, WV = (r.normal(size=(heads, D, dk)) for _ in range(3))
        WO = r.normal(size=(heads * dk, D))
        y, cache = L.mha_forward(x, L.MultiHeadAttnParams(WQ, WK, WV, WO))
        wy, wa = oracles.multi_head_attention(x.tolist(), WQ.tolist(), WK.tolist(), WV.tolist(), WO.tolist())
        worst = max(worst, float(np.abs(y - wy).max()), float(np.abs(cache.weights[0] - wa).max()))
    return worst


# --------------------------------------------------------------------------
# checkpoints


def _b64(values):
    import base64
    import struct

    return base64.b64encode(struct.pack(f"<{len(values)}d", *values)).decode("ascii")


def hand_written_checkpoints():
    """Checkpoint documents typed out from the format description, each with
    input windows and expected outputs worked out independently.

    Yields ``(name, document, windows, expected_predictions)``.
    """
    common = {"lstm1_hidden": 1, "lstm2_hidden": 1, "lstm3_hidden": 1, "attn_heads": 1,
              "attn_key_dim": 1, "dropout_rate": 0.0, "conv_activation": "relu",
              "pool_window": 2, "layernorm_epsilon": 1e-5, "input_features": 1}

    # conv(k=2) -> relu -> maxpool(2) -> dense: by hand,
    # [1,2,3]: conv = [0.5+2+0.1, 1+3+0.1] = [2.6, 4.1] -> pool 4.1 -> 2*4.1-1 = 7.2
    cnn = {
        "format": "a2clnet-checkpoint", "format_version": 1, "seed": None,
        "config": {**common, "variant": "VanillaCNN", "lookback_window": 3, "conv_filters": 1, "conv_kernel": 2},
        "head_activation": "linear", "normalization": None, "hyperparams": None,
        "tensors": {
            "conv.filters": {"shape": [1, 1, 2], "dtype": "<f8", "data": _b64([0.5, 1.0])},
            "conv.bias": {"shape": [1], "dtype": "<f8", "data": _b64([0.1])},
            "head.W": {"shape": [1, 1], "dtype": "<f8", "data": _b64([2.0])},
            "head.b": {"shape": [1], "dtype": "<f8", "data": _b64([-1.0])},
        },
    }
    cnn_windows = np.array([[[1.0], [2.0], [3.0]], [[-1.0], [-2.0], [-3.0]]])
    # second window: conv = [-0.5-2+0.1, -1-3+0.1] -> relu -> 0 -> head -1
    yield "VanillaCNN", cnn, cnn_windows, [7.2, -1.0]

    # one-unit LSTM over two steps then dense; expected via the cell oracle
    W = [0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.2, 0.6]  # rows f, i, c, o over [h, x]
    b = [0.1, 0.0, -0.1, 0.2]
    lstm = {
        "format": "a2clnet-checkpoint", "format_version": 1, "seed": 0,
        "config": {**common, "variant": "VanillaLSTM", "lookback_window": 2, "conv_filters": 1, "conv_kernel": 1},
        "head_activation": "linear", "normalization": None, "hyperparams": None,
        "tensors": {
            "lstm.W": {"shape": [4, 2], "dtype": "<f8", "data": _b64(W)},
            "lstm.b": {"shape": [4], "dtype": "<f8", "data": _b64(b)},
            "head.W": {"shape": [1, 1], "dtype": "<f8", "data": _b64([1.5])},
            "head.b": {"shape": [1], "dtype": "<f8", "data": _b64([0.25])},
        },
    }
    windows = np.array([[[0.4], [-0.9]], [[1.0], [2.0]]])
    expected = []
    for win in windows:
        h, c = [0.0], [0.0]
        for x in win[:, 0]:
            gates = [[W[2 * k:2 * k + 2]] for k in range(4)]
            h, c = oracles.lstm_cell([x], h, c, *gates, [b[0]], [b[1]], [b[2]], [b[3]])
        expected.append(1.5 * h[0] + 0.25)
    yield "VanillaLSTM", lstm, windows, expected


def checkpoint_roundtrip_mismatches(path, n=100, seed=0):
    """Train-free round trip on a small A2CLNet: count inputs whose prediction changes."""
    from a2clnet.model import load_checkpoint, save_checkpoint

    cfg = ArchitectureConfig(conv_filters=4, lstm1_hidden=4, lstm2_hidden=4, lstm3_hidden=4,
                             attn_heads=2, attn_key_dim=2)
    model = build(cfg, "He", Rng(seed))
    model.normalization = {"version": 1, "names": ["load"], "mins": [900.0], "maxs": [1500.0]}
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    X = np.random.default_rng(seed).uniform(size=(n, cfg.lookback_window, 1))
    a, b = model.forward(X), loaded.forward(X)
    per_window = sum(model.forward(X[i]) != loaded.forward(X[i]) for i in range(n))
    return int(np.sum(a != b)) + int(per_window), loaded.normalization == model.normalization


# --------------------------------------------------------------------------
# swarm search


def sphere_runs(seeds=range(10), dims=5, swarm_size=20, iterations=100):
    """gbest traces of the swarm on sum(x^2) over [-5, 5]^dims, one per seed."""
    from a2clnet.pso import SearchSpace, SwarmConfig, optimize

    space = SearchSpace.continuous([(f"x{i}", -5.0, 5.0) for i in range(dims)])
    traces = []
    for s in seeds:
        cfg = SwarmConfig(swarm_size=swarm_size, max_iterations=iterations, seed=s, stall_window=None)
        _, hist = optimize(space, lambda d: sum(v * v for v in d.values()), cfg)
        traces.append(hist.gbest)
    return traces


PLANTED = dict(learning_rate=0.0137, batch_size=57, epochs=1234, init_scheme="He", loss_metric="MAPE")


def planted_distance(hp, planted=PLANTED):
    from a2clnet.training import BATCH_RANGE, EPOCH_RANGE, LR_RANGE

    d = abs(hp.learning_rate - planted["learning_rate"]) / (LR_RANGE[1] - LR_RANGE[0])
    d += abs(hp.batch_size - planted["batch_size"]) / (BATCH_RANGE[1] - BATCH_RANGE[0])
    d += abs(hp.epochs - planted["epochs"]) / (EPOCH_RANGE[1] - EPOCH_RANGE[0])
    d += float(hp.init_scheme.value != planted["init_scheme"])
    d += float(hp.loss_metric.value != planted["loss_metric"])
    return d


def planted_recovered(hp, planted=PLANTED):
    from a2clnet.training import LR_RANGE

    return (hp.init_scheme.value == planted["init_scheme"]
            and hp.loss_metric.value == planted["loss_metric"]
            and abs(hp.batch_size - planted["batch_size"]) <= 1
            and abs(hp.epochs - planted["epochs"]) <= 1
            and abs(hp.learning_rate - planted["learning_rate"]) <= 0.01 * (LR_RANGE[1] - LR_RANGE[0]))


def planted_runs(seeds=range(10), iterations=50):
    """``[(recovered, iterations_used)]`` per seed on the hyperparameter space."""
    from a2clnet.pso import SwarmConfig, hyperparameter_space, optimize

    out = []
    for s in seeds:
        best, hist = optimize(hyperparameter_space(), planted_distance,
                              SwarmConfig(swarm_size=20, max_iterations=iterations, seed=s))
        out.append((planted_recovered(best), hist.iterations))
    return out


# --------------------------------------------------------------------------
# metrics


def metric_oracle_errors(n=1000, seed=0):
    """Worst absolute gap between package metrics and the loop oracles."""
    from a2clnet import metrics

    r = np.random.default_rng(seed)
    worst = {"r2": 0.0, "mape": 0.0, "mae": 0.0}
    for _ in range(n):
        size = int(r.integers(2, 50))
        y = r.uniform(50, 150, size) * r.choice([-1, 1], size)
        yhat = y + r.normal(0, 10, size)
        yl, hl = y.tolist(), yhat.tolist()
        worst["r2"] = max(worst["r2"], abs(metrics.r_squared(y, yhat) - oracles.r_squared(yl, hl)))
        worst["mape"] = max(worst["mape"], abs(metrics.mape(y, yhat) - oracles.mape_percent(yl, hl)))
        worst["mae"] = max(worst["mae"], abs(metrics.mae(y, yhat) - oracles.mae(yl, hl)))
    return worst
