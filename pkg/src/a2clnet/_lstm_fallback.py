"""Pure-numpy LSTM recurrence with the same contract as ``_lstm_kernel``."""

import numpy as np
from scipy.special import expit


def lstm_forward(gates, w_h, h0, c0, reverse=False):
    T, B, G = gates.shape
    H = G // 4
    c = np.empty((T, B, H))
    h = np.empty((T, B, H))
    h_prev, c_prev = h0, c0
    for t in (range(T - 1, -1, -1) if reverse else range(T)):
        g = gates[t]
        g += h_prev @ w_h
        g[:, :2 * H] = expit(g[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(g[:, 2 * H:3 * H])
        g[:, 3 * H:] = expit(g[:, 3 * H:])
        c[t] = g[:, :H] * c_prev + g[:, H:2 * H] * g[:, 2 * H:3 * H]
        h[t] = g[:, 3 * H:] * np.tanh(c[t])
        h_prev, c_prev = h[t], c[t]
    return c, h


def lstm_backward(dh_up, gates, c, c0, w_h, dz, reverse=False):
    T, B, G = gates.shape
    H = G // 4
    dh = np.zeros((B, H))
    dc = np.zeros((B, H))
    steps = list(range(T - 1, -1, -1) if reverse else range(T))
    for s in range(T - 1, -1, -1):
        t = steps[s]
        g = gates[t]
        f, i, cand, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        cp = c0 if s == 0 else c[steps[s - 1]]
        tc = np.tanh(c[t])
        dhv = dh + dh_up[t]
        dcv = dc + dhv * o * (1.0 - tc * tc)
        d = dz[t]
        d[:, :H] = dcv * cp * f * (1.0 - f)
        d[:, H:2 * H] = dcv * cand * i * (1.0 - i)
        d[:, 2 * H:3 * H] = dcv * i * (1.0 - cand * cand)
        d[:, 3 * H:] = dhv * tc * o * (1.0 - o)
        dc = dcv * f
        dh = d @ w_h.T
    return dh, dc
