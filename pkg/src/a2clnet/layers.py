"""Layer math with hand-derived backward passes.

Sequence tensors are laid out ``(batch, time, features)``; every forward
function also accepts the unbatched ``(time, features)`` form and returns
outputs of the matching rank. Each ``*_forward`` returns ``(output, cache)``
and the matching ``*_backward`` consumes that cache and returns a
:class:`LayerGradients`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .errors import ConfigurationError, InputError, ShapeError
from .tensor import ACTIVATIONS, activation_grad, as_tensor, row_sums, sigmoid, softmax_rows

INFER = "infer"
TRAIN = "train"


@dataclass
class LayerGradients:
    """Gradient w.r.t. the layer input plus one entry per parameter."""

    dx: np.ndarray
    params: Dict[str, Any] = field(default_factory=dict)


def _batched(x: np.ndarray, rank: int):
    x = as_tensor(x)
    if x.ndim == rank - 1:
        return x[None], True
    if x.ndim != rank:
        raise ShapeError(f"expected a rank {rank - 1} or {rank} tensor, got shape {x.shape}")
    return x, False


# --------------------------------------------------------------------------
# Conv1D / max-pool


@dataclass
class Conv1DParams:
    filters: np.ndarray  # (out_channels, in_channels, kernel_len)
    bias: np.ndarray  # (out_channels,)
    stride: int = 1

    def __post_init__(self):
        self.filters = as_tensor(self.filters)
        self.bias = as_tensor(self.bias)
        if self.filters.ndim != 3 or self.filters.shape[2] < 1:
            raise ShapeError(f"conv filters must be (out, in, kernel>=1), got {self.filters.shape}")
        if self.bias.shape != (self.filters.shape[0],):
            raise ShapeError(f"conv bias {self.bias.shape} does not match filters {self.filters.shape}")
        if int(self.stride) < 1:
            raise ConfigurationError(f"conv stride must be >= 1, got {self.stride}")


def conv_output_length(time: int, window: int, stride: int) -> int:
    return (time - window) // stride + 1


def conv1d_forward(x, p: Conv1DParams):
    """Valid cross-correlation over time.

    ``y[t, o] = b[o] + sum_{c,k} x[t*stride + k, c] * filters[o, c, k]``
    """
    x3, squeeze = _batched(x, 3)
    B, T, C = x3.shape
    O, Cin, K = p.filters.shape
    if C != Cin:
        raise ShapeError(f"conv input has {C} channels, filters expect {Cin}")
    if T < K:
        raise ShapeError(f"conv window {K} is longer than input length {T}")
    t_out = conv_output_length(T, K, p.stride)
    cols = sliding_window_view(x3, K, axis=1)[:, :: p.stride][:, :t_out]
    cols = np.ascontiguousarray(cols).reshape(B * t_out, C * K)
    w2 = p.filters.reshape(O, C * K)
    y = (cols @ w2.T + p.bias).reshape(B, t_out, O)
    cache = (cols, x3.shape, p, squeeze)
    return (y[0] if squeeze else y), cache


def conv1d_backward(dy, cache) -> LayerGradients:
    cols, xshape, p, squeeze = cache
    B, T, C = xshape
    O, _, K = p.filters.shape
    dy2 = as_tensor(dy).reshape(-1, O)
    t_out = dy2.shape[0] // B
    dfilters = (dy2.T @ cols).reshape(O, C, K)
    dbias = dy2.sum(axis=0)
    dcols = (dy2 @ p.filters.reshape(O, C * K)).reshape(B, t_out, C, K)
    dx = np.zeros(xshape)
    span = p.stride * (t_out - 1) + 1
    for k in range(K):
        dx[:, k : k + span : p.stride, :] += dcols[:, :, :, k]
    return LayerGradients(dx[0] if squeeze else dx, {"filters": dfilters, "bias": dbias})


def maxpool1d_forward(x, window: int, stride: int):
    """Max over time windows; ties go to the earliest index.

    Returns ``(y, argmax)`` where ``argmax`` holds absolute time indices of
    the selected elements (the cache for backward).
    """
    x3, squeeze = _batched(x, 3)
    B, T, C = x3.shape
    if window < 1 or stride < 1:
        raise ConfigurationError("pool window and stride must be >= 1")
    if window > T:
        raise ShapeError(f"pool window {window} is longer than input length {T}")
    t_out = conv_output_length(T, window, stride)
    win = sliding_window_view(x3, window, axis=1)[:, ::stride][:, :t_out]  # (B, t_out, C, window)
    local = win.argmax(axis=-1)
    y = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    argmax = local + (np.arange(t_out) * stride)[None, :, None]
    cache = (argmax, x3.shape, squeeze)
    if squeeze:
        return y[0], cache
    return y, cache


def maxpool1d_backward(dy, cache) -> LayerGradients:
    argmax, xshape, squeeze = cache
    dy3 = as_tensor(dy).reshape(argmax.shape)
    B, _, C = xshape
    dx = np.zeros(xshape)
    bi = np.arange(B)[:, None, None]
    ci = np.arange(C)[None, None, :]
    np.add.at(dx, (bi, argmax, ci), dy3)
    return LayerGradients(dx[0] if squeeze else dx)


# --------------------------------------------------------------------------
# Dense / dropout / layer norm


def dense_forward(x, weights, bias, activation: str = "linear"):
    """``activation(W x + b)`` for ``x`` of shape (features,) or (batch, features)."""
    if activation not in ACTIVATIONS:
        raise ConfigurationError(f"unknown activation {activation!r}")
    x2, squeeze = _batched(x, 2)
    W = as_tensor(weights)
    b = as_tensor(bias)
    if W.ndim != 2 or W.shape[1] != x2.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense shapes disagree: x {x2.shape}, W {W.shape}, b {b.shape}")
    y = ACTIVATIONS[activation](x2 @ W.T + b)
    cache = (x2, W, y, activation, squeeze)
    return (y[0] if squeeze else y), cache


def dense_backward(dy, cache) -> LayerGradients:
    x2, W, y, activation, squeeze = cache
    dz = as_tensor(dy).reshape(y.shape) * activation_grad(activation, y)
    dx = dz @ W
    return LayerGradients(dx[0] if squeeze else dx, {"weights": dz.T @ x2, "bias": dz.sum(axis=0)})


def dropout_forward(x, rate: float, mode: str, rng=None):
    """Inverted dropout; returns ``(y, mask)`` with ``mask=None`` when inactive."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in (TRAIN, INFER):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = as_tensor(x)
    if mode == INFER or rate == 0.0:
        return x, None
    if rng is None:
        raise ConfigurationError("train-mode dropout needs an Rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(dy, mask) -> LayerGradients:
    dy = as_tensor(dy)
    return LayerGradients(dy if mask is None else dy * mask)


@dataclass
class LayerNormParams:
    gain: np.ndarray
    shift: np.ndarray
    epsilon: float = 1e-5

    def __post_init__(self):
        self.gain = as_tensor(self.gain)
        self.shift = as_tensor(self.shift)
        if self.epsilon <= 0:
            raise ConfigurationError("layer norm epsilon must be positive")
        if self.gain.shape != self.shift.shape or self.gain.ndim != 1:
            raise ShapeError(f"layer norm gain {self.gain.shape} / shift {self.shift.shape} mismatch")


def layernorm_forward(x, p: LayerNormParams):
    x = as_tensor(x)
    if x.shape[-1] != p.gain.shape[0]:
        raise ShapeError(f"layer norm expects {p.gain.shape[0]} features, got {x.shape[-1]}")
    n = x.shape[-1]
    mu = row_sums(x)[..., None] / n
    xc = x - mu
    var = row_sums(xc * xc)[..., None] / n
    inv = 1.0 / np.sqrt(var + p.epsilon)
    xhat = xc * inv
    return xhat * p.gain + p.shift, (xhat, inv, p)


def layernorm_backward(dy, cache) -> LayerGradients:
    xhat, inv, p = cache
    dy = as_tensor(dy)
    n = xhat.shape[-1]
    lead = tuple(range(dy.ndim - 1))
    dgain = (dy * xhat).sum(axis=lead)
    dshift = dy.sum(axis=lead)
    dxhat = dy * p.gain
    dx = inv / n * (
        n * dxhat
        - row_sums(dxhat)[..., None]
        - xhat * row_sums(dxhat * xhat)[..., None]
    )
    return LayerGradients(dx, {"gain": dgain, "shift": dshift})


# --------------------------------------------------------------------------
# LSTM


@dataclass
class LSTMParams:
    """Stacked gate weights.

    ``W`` is ``(4*hidden, hidden + input)`` with row blocks forget, input,
    candidate, output; columns act on the concatenation ``[h_{t-1}, x_t]``.
    """

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = as_tensor(self.W)
        self.b = as_tensor(self.b)
        G = self.W.shape[0]
        if self.W.ndim != 2 or G % 4 or G == 0 or self.W.shape[1] <= G // 4:
            raise ShapeError(f"LSTM weights must be (4H, H+I) with H, I >= 1, got {self.W.shape}")
        if self.b.shape != (G,):
            raise ShapeError(f"LSTM bias must be ({G},), got {self.b.shape}")

    @classmethod
    def from_gates(cls, W_f, W_i, W_c, W_o, b_f, b_i, b_c, b_o):
        shapes = {np.shape(w) for w in (W_f, W_i, W_c, W_o)}
        if len(shapes) != 1 or len({np.shape(v) for v in (b_f, b_i, b_c, b_o)}) != 1:
            raise ShapeError("all four gate matrices (and biases) must share one shape")
        return cls(np.vstack([W_f, W_i, W_c, W_o]), np.concatenate([b_f, b_i, b_c, b_o]))

    @property
    def hidden(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden

    def _block(self, k):
        H = self.hidden
        return self.W[k * H : (k + 1) * H]

    W_f = property(lambda self: self._block(0))
    W_i = property(lambda self: self._block(1))
    W_c = property(lambda self: self._block(2))
    W_o = property(lambda self: self._block(3))
    b_f = property(lambda self: self.b[: self.hidden])
    b_i = property(lambda self: self.b[self.hidden : 2 * self.hidden])
    b_c = property(lambda self: self.b[2 * self.hidden : 3 * self.hidden])
    b_o = property(lambda self: self.b[3 * self.hidden :])


@dataclass
class LSTMState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden: int, batch: Optional[int] = None):
        shape = (hidden,) if batch is None else (batch, hidden)
        return cls(np.zeros(shape), np.zeros(shape))


def lstm_cell_forward(x_t, prev: LSTMState, p: LSTMParams):
    """One LSTM step; returns ``(LSTMState, cache)``.

    Gate activations are asserted to lie in their ranges after the step.
    """
    x2, squeeze = _batched(x_t, 2)
    h_prev, _ = _batched(prev.h, 2)
    c_prev, _ = _batched(prev.c, 2)
    H = p.hidden
    if x2.shape[1] != p.input_size or h_prev.shape[1] != H or c_prev.shape != h_prev.shape:
        raise ShapeError(
            f"LSTM step shapes disagree: x {x2.shape}, h {h_prev.shape}, c {c_prev.shape}, W {p.W.shape}"
        )
    hx = np.concatenate([h_prev, x2], axis=1)
    z = hx @ p.W.T + p.b
    f = sigmoid(z[:, :H])
    i = sigmoid(z[:, H : 2 * H])
    g = np.tanh(z[:, 2 * H : 3 * H])
    o = sigmoid(z[:, 3 * H :])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    assert ((f >= 0) & (f <= 1) & (i >= 0) & (i <= 1) & (o >= 0) & (o <= 1)).all()
    assert (np.abs(g) <= 1).all() and (np.abs(h) <= 1).all()
    cache = (hx, c_prev, f, i, g, o, tc, p, squeeze)
    if squeeze:
        return LSTMState(h[0], c[0]), cache
    return LSTMState(h, c), cache


def lstm_cell_backward(dh, dc, cache):
    """Returns ``(LayerGradients, dh_prev, dc_prev)`` for one step."""
    hx, c_prev, f, i, g, o, tc, p, squeeze = cache
    H = p.hidden
    dh = as_tensor(dh).reshape(f.shape)
    dc = as_tensor(dc).reshape(f.shape) + dh * o * (1.0 - tc * tc)
    dz = np.concatenate(
        [
            dc * c_prev * f * (1.0 - f),
            dc * g * i * (1.0 - i),
            dc * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ],
        axis=1,
    )
    dW = dz.T @ hx
    db = dz.sum(axis=0)
    dhx = dz @ p.W
    dh_prev, dx = dhx[:, :H], dhx[:, H:]
    dc_prev = dc * f
    if squeeze:
        dx, dh_prev, dc_prev = dx[0], dh_prev[0], dc_prev[0]
    return LayerGradients(dx, {"W": dW, "b": db}), dh_prev, dc_prev


@dataclass
class RecurrentCache:
    """State kept by a (bi)directional LSTM pass for backpropagation."""

    xt: np.ndarray  # (T, B, I) time-major input
    gates: np.ndarray  # (T, B, 4H * directions) activated gates
    w_x: np.ndarray  # (4H * directions, I) stacked input weights
    w_h: List[np.ndarray]  # per direction, (H, 4H)
    c: List[np.ndarray]  # per direction, (T, B, H) in time order
    h: List[np.ndarray]
    params: List["LSTMParams"]
    reverse: List[bool]
    squeeze: bool


def _recurrent_forward(xs, directions):
    """Run one LSTM per ``(params, reverse)`` over the same input.

    All directions share one input-projection GEMM; their gates live side by
    side in a single buffer that the recurrence kernel updates in place.
    """
    x3, squeeze = _batched(xs, 3)
    B, T, I = x3.shape
    if T == 0:
        raise InputError("LSTM input sequence is empty")
    H = directions[0][0].hidden
    for p, _ in directions:
        if p.input_size != I:
            raise ShapeError(f"LSTM expects {p.input_size} input features, got {I}")
        if p.hidden != H:
            raise ShapeError("all directions must share the hidden size")
    G = 4 * H
    xt = np.ascontiguousarray(x3.transpose(1, 0, 2))
    w_x = np.concatenate([p.W[:, H:] for p, _ in directions]) if len(directions) > 1 else directions[0][0].W[:, H:]
    gates = xt.reshape(T * B, I) @ w_x.T
    gates += np.concatenate([p.b for p, _ in directions])
    gates = gates.reshape(T, B, G * len(directions))
    zeros = np.zeros((B, H))
    cache = RecurrentCache(xt, gates, w_x, [], [], [], [p for p, _ in directions],
                           [bool(r) for _, r in directions], squeeze)
    for k, (p, reverse) in enumerate(directions):
        w_h = np.ascontiguousarray(p.W[:, :H].T)
        c, h = kernels.lstm_forward(gates[:, :, k * G : (k + 1) * G], w_h, zeros, zeros, bool(reverse))
        cache.w_h.append(w_h)
        cache.c.append(c)
        cache.h.append(h)
    return cache


def _recurrent_backward(dhs, cache: RecurrentCache):
    """``dhs``: per direction, (B, T, H) gradients w.r.t. the hidden states."""
    T, B, I = cache.xt.shape
    H = cache.params[0].hidden
    G = 4 * H
    dz = np.empty_like(cache.gates)
    zeros = np.zeros((B, H))
    grads = []
    for k, p in enumerate(cache.params):
        dh_up = as_tensor(dhs[k]).reshape(B, T, H).transpose(1, 0, 2)
        dzk = dz[:, :, k * G : (k + 1) * G]
        kernels.lstm_backward(dh_up, cache.gates[:, :, k * G : (k + 1) * G], cache.c[k], zeros,
                              cache.w_h[k], dzk, cache.reverse[k])
        dW = np.empty_like(p.W)
        # h_{t-1} is the neighbour in processing order; the first step sees h = 0
        if T > 1:
            if cache.reverse[k]:
                dz_rec, h_prev = dzk[:-1], cache.h[k][1:]
            else:
                dz_rec, h_prev = dzk[1:], cache.h[k][:-1]
            np.matmul(dz_rec.reshape(-1, G).T, h_prev.reshape(-1, H), out=dW[:, :H])
        else:
            dW[:, :H] = 0.0
        grads.append(dW)
    dz2 = dz.reshape(T * B, -1)
    dW_x = dz2.T @ cache.xt.reshape(T * B, I)
    db = dz2.sum(axis=0)
    dx = (dz2 @ cache.w_x).reshape(T, B, I).transpose(1, 0, 2)
    params = []
    for k, dW in enumerate(grads):
        dW[:, H:] = dW_x[k * G : (k + 1) * G]
        params.append({"W": dW, "b": db[k * G : (k + 1) * G]})
    return (dx[0] if cache.squeeze else dx), params


def lstm_forward(xs, p: LSTMParams, reverse: bool = False):
    """Run an LSTM over ``xs`` from zero initial state.

    Returns ``(hs, cache)`` with ``hs`` shaped like ``xs`` but with ``hidden``
    features. With ``reverse=True`` the sequence is consumed right to left and
    ``hs[t]`` is the state after having read ``xs[t:]``.
    """
    cache = _recurrent_forward(xs, [(p, reverse)])
    hs = cache.h[0].transpose(1, 0, 2)
    return (hs[0] if cache.squeeze else hs), cache


def lstm_backward(dhs, cache: RecurrentCache) -> LayerGradients:
    dx, params = _recurrent_backward([dhs], cache)
    return LayerGradients(dx, params[0])


def bilstm_forward(xs, fwd: LSTMParams, bwd: LSTMParams):
    """Forward and reverse passes concatenated per step: ``[h_fwd, h_bwd]``."""
    cache = _recurrent_forward(xs, [(fwd, False), (bwd, True)])
    out = np.concatenate([h.transpose(1, 0, 2) for h in cache.h], axis=-1)
    return (out[0] if cache.squeeze else out), cache


def bilstm_backward(dout, cache: RecurrentCache) -> LayerGradients:
    H = cache.params[0].hidden
    dout = as_tensor(dout)
    dx, (gf, gb) = _recurrent_backward([dout[..., :H], dout[..., H:]], cache)
    return LayerGradients(dx, {"fwd": gf, "bwd": gb})


# --------------------------------------------------------------------------
# Multi-head self-attention


@dataclass
class MultiHeadAttnParams:
    """Per-head projections ``W_Q, W_K, W_V`` of shape ``(heads, d_model, d_k)``
    and output projection ``W_O`` of shape ``(heads * d_k, d_model)``.
    Value width equals key width."""

    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    W_O: np.ndarray

    def __post_init__(self):
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            setattr(self, name, as_tensor(getattr(self, name)))
        if self.W_Q.ndim != 3 or min(self.W_Q.shape) < 1:
            raise ShapeError(f"W_Q must be (heads, d_model, d_k), got {self.W_Q.shape}")
        if self.W_K.shape != self.W_Q.shape or self.W_V.shape != self.W_Q.shape:
            raise ShapeError("W_Q, W_K and W_V must share one shape")
        h, d_model, d_k = self.W_Q.shape
        if self.W_O.shape != (h * d_k, d_model):
            raise ShapeError(f"W_O must be ({h * d_k}, {d_model}), got {self.W_O.shape}")

    @property
    def heads(self) -> int:
        return self.W_Q.shape[0]

    @property
    def key_dim(self) -> int:
        return self.W_Q.shape[2]

    @property
    def d_model(self) -> int:
        return self.W_Q.shape[1]


@dataclass
class MHACache:
    x: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    weights: np.ndarray  # (batch, heads, time, time)
    concat: np.ndarray
    p: MultiHeadAttnParams
    squeeze: bool


def _stacked_projection(p: MultiHeadAttnParams) -> np.ndarray:
    """``(d_model, 3*heads*d_k)``: Q, K, V projections of every head side by side."""
    h, D, dk = p.W_Q.shape
    return np.concatenate([w.transpose(1, 0, 2).reshape(D, h * dk) for w in (p.W_Q, p.W_K, p.W_V)], axis=1)


def mha_forward(x, p: MultiHeadAttnParams):
    """Self-attention; returns ``(y, cache)`` where ``cache.weights`` holds the
    per-head attention matrices (rows sum to one)."""
    x3, squeeze = _batched(x, 3)
    B, T, D = x3.shape
    if D != p.d_model:
        raise ShapeError(f"attention expects d_model={p.d_model}, got {D}")
    h, dk = p.heads, p.key_dim
    # one GEMM for all projections, then split into (3, B, h, T, dk)
    qkv = (x3.reshape(B * T, D) @ _stacked_projection(p)).reshape(B, T, 3, h, dk).transpose(2, 0, 3, 1, 4)
    Q, K, V = qkv[0], qkv[1], qkv[2]
    scores = Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dk)
    A = softmax_rows(scores)
    heads = A @ V
    concat = heads.transpose(0, 2, 1, 3).reshape(B, T, h * dk)
    y = concat @ p.W_O
    cache = MHACache(x3, Q, K, V, A, concat, p, squeeze)
    return (y[0] if squeeze else y), cache


def mha_backward(dy, cache: MHACache) -> LayerGradients:
    p = cache.p
    B, T, D = cache.x.shape
    h, dk = p.heads, p.key_dim
    dy2 = as_tensor(dy).reshape(B * T, D)
    dW_O = cache.concat.reshape(B * T, h * dk).T @ dy2
    dheads = (dy2 @ p.W_O.T).reshape(B, T, h, dk).transpose(0, 2, 1, 3)
    A = cache.weights
    dA = dheads @ cache.V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dheads
    dS = A * (dA - row_sums(dA * A)[..., None]) / np.sqrt(dk)
    dQ = dS @ cache.K
    dK = dS.transpose(0, 1, 3, 2) @ cache.Q
    # back to (B*T, 3*h*dk), matching the stacked projection layout
    dqkv = np.stack([dQ, dK, dV]).transpose(1, 3, 0, 2, 4).reshape(B * T, 3 * h * dk)
    x2 = cache.x.reshape(B * T, D)
    dW = (x2.T @ dqkv).reshape(D, 3, h, dk).transpose(1, 2, 0, 3)
    dx = (dqkv @ _stacked_projection(p).T).reshape(B, T, D)
    grads = {"W_Q": dW[0], "W_K": dW[1], "W_V": dW[2], "W_O": dW_O}
    return LayerGradients(dx[0] if cache.squeeze else dx, grads)
