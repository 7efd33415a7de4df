"""Recurrent cells (vanilla sigmoid RNN, LSTM, GRU), their unrolled
sequence forms with backpropagation through time, and the bidirectional
output combiner.

Conventions: row vectors, so a step is h_t = act(h_prev @ W_h + x_t @ W_x + b).
Hidden state starts at zero. Cell weights are plain dicts of arrays; the
classifiers map them onto flat parameter slices via ParamLayout.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError
from .layers import sigmoid, softmax

__all__ = [
    "rnn_cell", "lstm_cell", "gru_cell", "bidirectional_combine",
    "rnn_seq_forward", "rnn_seq_backward",
    "lstm_seq_forward", "lstm_seq_backward",
    "gru_seq_forward", "gru_seq_backward",
]


def _affine(h_prev, x_t, wh, wx, b):
    return h_prev @ wh + x_t @ wx + b


def rnn_cell(h_prev: np.ndarray, x_t: np.ndarray, weights: dict) -> np.ndarray:
    """h_t = sigmoid(h_prev W_h + x_t W_x + b)."""
    return sigmoid(_affine(h_prev, x_t, weights["W_h"], weights["W_x"], weights["b"]))


def lstm_cell(h_prev: np.ndarray, c_prev: np.ndarray, x_t: np.ndarray,
              weights: dict) -> tuple[np.ndarray, np.ndarray]:
    """Forget/input/output-gated cell.

    f, i, o = sigmoid gates; c' = tanh candidate;
    c_t = f * c_prev + i * c'; h_t = o * tanh(c_t).
    """
    f = sigmoid(_affine(h_prev, x_t, weights["W_fh"], weights["W_fx"], weights["b_f"]))
    i = sigmoid(_affine(h_prev, x_t, weights["W_ih"], weights["W_ix"], weights["b_i"]))
    cbar = np.tanh(_affine(h_prev, x_t, weights["W_ch"], weights["W_cx"], weights["b_c"]))
    o = sigmoid(_affine(h_prev, x_t, weights["W_oh"], weights["W_ox"], weights["b_o"]))
    c_t = f * c_prev + i * cbar
    return o * np.tanh(c_t), c_t


def gru_cell(h_prev: np.ndarray, x_t: np.ndarray, weights: dict) -> np.ndarray:
    """Update/reset-gated cell: h_t = (1-z) * h_prev + z * h'."""
    r = sigmoid(_affine(h_prev, x_t, weights["W_rh"], weights["W_rx"], weights["b_r"]))
    z = sigmoid(_affine(h_prev, x_t, weights["W_zh"], weights["W_zx"], weights["b_z"]))
    hbar = np.tanh((r * h_prev) @ weights["W_ch"] + x_t @ weights["W_cx"] + weights["b_c"])
    return (1.0 - z) * h_prev + z * hbar


def bidirectional_combine(h_t: np.ndarray, z_t: np.ndarray,
                          weights: dict) -> np.ndarray:
    """Class scores from a forward state and a backward state:
    softmax(h_t W_yh + z_t W_yz + b_y), softmax over the last axis."""
    if h_t.shape != z_t.shape:
        raise ArgumentError(f"state shapes differ: {h_t.shape} vs {z_t.shape}")
    return softmax(h_t @ weights["W_yh"] + z_t @ weights["W_yz"] + weights["b_y"])


# ---------------------------------------------------------------------------
# unrolled sequences with BPTT

def rnn_seq_forward(x: np.ndarray, w: dict):
    """x: [batch, time, features] -> (h_seq [batch, time, hidden], cache)."""
    b_, t_, _ = x.shape
    hdim = w["W_h"].shape[0]
    h = np.zeros((b_, hdim))
    hs = []
    for t in range(t_):
        h = rnn_cell(h, x[:, t, :], w)
        hs.append(h)
    return np.stack(hs, axis=1), (x, np.stack(hs, axis=1))


def rnn_seq_backward(dh_seq: np.ndarray, cache, w: dict):
    x, hs = cache
    b_, t_, hdim = hs.shape
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    dx = np.zeros_like(x)
    dh_next = np.zeros((b_, hdim))
    for t in range(t_ - 1, -1, -1):
        h = hs[:, t, :]
        h_prev = hs[:, t - 1, :] if t > 0 else np.zeros((b_, hdim))
        da = (dh_seq[:, t, :] + dh_next) * h * (1.0 - h)
        grads["W_x"] += x[:, t, :].T @ da
        grads["W_h"] += h_prev.T @ da
        grads["b"] += da.sum(axis=0)
        dx[:, t, :] = da @ w["W_x"].T
        dh_next = da @ w["W_h"].T
    return dx, grads


def lstm_seq_forward(x: np.ndarray, w: dict):
    b_, t_, _ = x.shape
    hdim = w["W_fh"].shape[0]
    h = np.zeros((b_, hdim))
    c = np.zeros((b_, hdim))
    steps = []
    hs = []
    for t in range(t_):
        xt = x[:, t, :]
        f = sigmoid(_affine(h, xt, w["W_fh"], w["W_fx"], w["b_f"]))
        i = sigmoid(_affine(h, xt, w["W_ih"], w["W_ix"], w["b_i"]))
        cbar = np.tanh(_affine(h, xt, w["W_ch"], w["W_cx"], w["b_c"]))
        o = sigmoid(_affine(h, xt, w["W_oh"], w["W_ox"], w["b_o"]))
        c_new = f * c + i * cbar
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        steps.append((h, c, f, i, cbar, o, tanh_c))
        h, c = h_new, c_new
        hs.append(h)
    return np.stack(hs, axis=1), (x, steps)


def lstm_seq_backward(dh_seq: np.ndarray, cache, w: dict):
    x, steps = cache
    b_, t_, _ = x.shape
    hdim = w["W_fh"].shape[0]
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    dx = np.zeros_like(x)
    dh_next = np.zeros((b_, hdim))
    dc_next = np.zeros((b_, hdim))
    for t in range(t_ - 1, -1, -1):
        h_prev, c_prev, f, i, cbar, o, tanh_c = steps[t]
        xt = x[:, t, :]
        dh = dh_seq[:, t, :] + dh_next
        do = dh * tanh_c
        dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
        daf = dc * c_prev * f * (1.0 - f)
        dai = dc * cbar * i * (1.0 - i)
        dac = dc * i * (1.0 - cbar * cbar)
        dao = do * o * (1.0 - o)
        dc_next = dc * f
        for name, da in (("f", daf), ("i", dai), ("c", dac), ("o", dao)):
            grads[f"W_{name}h"] += h_prev.T @ da
            grads[f"W_{name}x"] += xt.T @ da
            grads[f"b_{name}"] += da.sum(axis=0)
        dh_next = (daf @ w["W_fh"].T + dai @ w["W_ih"].T
                   + dac @ w["W_ch"].T + dao @ w["W_oh"].T)
        dx[:, t, :] = (daf @ w["W_fx"].T + dai @ w["W_ix"].T
                       + dac @ w["W_cx"].T + dao @ w["W_ox"].T)
    return dx, grads


def gru_seq_forward(x: np.ndarray, w: dict):
    b_, t_, _ = x.shape
    hdim = w["W_rh"].shape[0]
    h = np.zeros((b_, hdim))
    steps = []
    hs = []
    for t in range(t_):
        xt = x[:, t, :]
        r = sigmoid(_affine(h, xt, w["W_rh"], w["W_rx"], w["b_r"]))
        z = sigmoid(_affine(h, xt, w["W_zh"], w["W_zx"], w["b_z"]))
        rh = r * h
        hbar = np.tanh(rh @ w["W_ch"] + xt @ w["W_cx"] + w["b_c"])
        h_new = (1.0 - z) * h + z * hbar
        steps.append((h, r, z, rh, hbar))
        h = h_new
        hs.append(h)
    return np.stack(hs, axis=1), (x, steps)


def gru_seq_backward(dh_seq: np.ndarray, cache, w: dict):
    x, steps = cache
    b_, t_, _ = x.shape
    hdim = w["W_rh"].shape[0]
    grads = {k: np.zeros_like(v) for k, v in w.items()}
    dx = np.zeros_like(x)
    dh_next = np.zeros((b_, hdim))
    for t in range(t_ - 1, -1, -1):
        h_prev, r, z, rh, hbar = steps[t]
        xt = x[:, t, :]
        dh = dh_seq[:, t, :] + dh_next
        dz = dh * (hbar - h_prev)
        daz = dz * z * (1.0 - z)
        dhbar = dh * z
        dah = dhbar * (1.0 - hbar * hbar)
        drh = dah @ w["W_ch"].T
        dar = drh * h_prev * r * (1.0 - r)
        grads["W_ch"] += rh.T @ dah
        grads["W_cx"] += xt.T @ dah
        grads["b_c"] += dah.sum(axis=0)
        grads["W_rh"] += h_prev.T @ dar
        grads["W_rx"] += xt.T @ dar
        grads["b_r"] += dar.sum(axis=0)
        grads["W_zh"] += h_prev.T @ daz
        grads["W_zx"] += xt.T @ daz
        grads["b_z"] += daz.sum(axis=0)
        dh_next = (dh * (1.0 - z) + drh * r
                   + dar @ w["W_rh"].T + daz @ w["W_zh"].T)
        dx[:, t, :] = dah @ w["W_cx"].T + dar @ w["W_rx"].T + daz @ w["W_zx"].T
    return dx, grads
