"""Neural layer primitives with hand-derived backward passes.

Forward functions either stand alone (the documented public operations) or
return an opaque cache consumed by the matching ``*_backward``. Everything
is float64 numpy; no autodiff anywhere, which is what makes the
finite-difference oracle in :mod:`swarmgrad.models.base` a real check.
"""

from __future__ import annotations

import numpy as np

from ..errors import ArgumentError

__all__ = [
    "sigmoid", "activation", "activation_backward", "softmax",
    "cross_entropy", "softmax_xent", "softmax_xent_backward",
    "fc_forward", "fc_backward",
    "layer_norm_forward", "layer_norm_backward",
    "position_encoding", "position_encoding_matrix",
    "scaled_dot_attention", "attention_forward", "attention_backward",
    "multi_head_attention", "mha_forward", "mha_backward",
    "conv2d_forward", "conv2d_backward",
    "pool2d_forward", "pool2d_backward",
    "global_average_pool",
    "temporal_max_pool", "temporal_max_pool_backward",
    "dropout_forward", "gaussian_noise_forward",
]

PROB_FLOOR = 1e-12
_LN_EPS = 1e-12
LEAKY_SLOPE = 0.01


def sigmoid(x):
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """sigmoid | tanh | relu | leaky_relu (slope 0.01)."""
    x = np.asarray(x, dtype=float)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    raise ArgumentError(f"unknown activation {kind!r}")


def activation_backward(dout: np.ndarray, x: np.ndarray, out: np.ndarray,
                        kind: str) -> np.ndarray:
    if kind == "sigmoid":
        return dout * out * (1.0 - out)
    if kind == "tanh":
        return dout * (1.0 - out * out)
    if kind == "relu":
        return dout * (x > 0)
    if kind == "leaky_relu":
        return dout * np.where(x > 0, 1.0, LEAKY_SLOPE)
    raise ArgumentError(f"unknown activation {kind!r}")


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Row-wise softmax, stabilized by max subtraction."""
    x = np.asarray(x, dtype=float)
    shifted = x - x.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=axis, keepdims=True)


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class.

    Rows must already be distributions (sum to 1 within 1e-6); they are
    clamped at 1e-12 before the log.
    """
    p = np.asarray(probabilities, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if p.ndim != 2 or labels.shape != (p.shape[0],):
        raise ArgumentError(f"expected [batch, classes] probabilities, got {p.shape}")
    sums = p.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ArgumentError("probability rows must sum to 1 within 1e-6")
    picked = p[np.arange(p.shape[0]), labels]
    return float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Fused softmax + cross-entropy. Returns (loss, probabilities)."""
    probs = softmax(logits, axis=-1)
    picked = probs[np.arange(probs.shape[0]), labels]
    loss = float(-np.log(np.maximum(picked, PROB_FLOOR)).mean())
    return loss, probs


def softmax_xent_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. the logits."""
    grad = probs.copy()
    grad[np.arange(probs.shape[0]), labels] -= 1.0
    return grad / probs.shape[0]


# ---------------------------------------------------------------------------
# affine

def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Affine map on the last axis: x @ w + b."""
    if x.shape[-1] != w.shape[0]:
        raise ArgumentError(f"fc: input dim {x.shape[-1]} != weight rows {w.shape[0]}")
    y = x @ w
    if b is not None:
        y = y + b
    return y


def fc_backward(dout: np.ndarray, x: np.ndarray, w: np.ndarray):
    """Returns (dx, dw, db); leading axes of x are treated as batch."""
    lead = x.reshape(-1, x.shape[-1])
    dlead = dout.reshape(-1, dout.shape[-1])
    dw = lead.T @ dlead
    db = dlead.sum(axis=0)
    dx = (dlead @ w.T).reshape(x.shape)
    return dx, dw, db


# ---------------------------------------------------------------------------
# layer norm (per token, learned scale/shift)

def layer_norm_forward(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray):
    """Normalize the last axis to zero mean / unit variance, then scale and
    shift. Returns (out, cache)."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mean) * istd
    return gamma * xhat + beta, (xhat, istd, gamma)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, istd, gamma = cache
    dxhat = dout * gamma
    dgamma = (dout * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    dbeta = dout.reshape(-1, dout.shape[-1]).sum(axis=0)
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = istd * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# position encoding

def position_encoding(pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of one position: interleaved sin/cos with
    wavelengths 10000^(2i/d_model)."""
    if d_model % 2 != 0 or d_model < 2:
        raise ArgumentError(f"d_model must be a positive even integer, got {d_model}")
    if pos < 0:
        raise ArgumentError(f"pos must be nonnegative, got {pos}")
    i = np.arange(d_model // 2)
    angles = pos / np.power(10000.0, 2.0 * i / d_model)
    pe = np.empty(d_model)
    pe[0::2] = np.sin(angles)
    pe[1::2] = np.cos(angles)
    return pe


def position_encoding_matrix(length: int, d_model: int) -> np.ndarray:
    """Stacked encodings for positions 0..length-1, shape [length, d_model]."""
    return np.stack([position_encoding(p, d_model) for p in range(length)])


# ---------------------------------------------------------------------------
# attention

def attention_forward(q: np.ndarray, k: np.ndarray, v: np.ndarray):
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes.

    Accepts arbitrary leading batch axes. Returns (out, cache).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ArgumentError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if q.shape[:-1] != k.shape[:-1] or k.shape[:-2] != v.shape[:-2] or k.shape[-2] != v.shape[-2]:
        raise ArgumentError(f"incompatible attention shapes {q.shape}, {k.shape}, {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    attn = softmax(scores, axis=-1)
    return attn @ v, (q, k, v, attn, scale)


def attention_backward(dout: np.ndarray, cache):
    q, k, v, attn, scale = cache
    dattn = dout @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ dout
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = (dscores @ k) * scale
    dk = (np.swapaxes(dscores, -1, -2) @ q) * scale
    return dq, dk, dv


def scaled_dot_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Single-head attention output for 2-D Q [n, d_k], K [n, d_k], V [n, d_v]."""
    out, _ = attention_forward(np.asarray(q, float), np.asarray(k, float),
                               np.asarray(v, float))
    return out


def mha_forward(x: np.ndarray, wq: np.ndarray, wk: np.ndarray,
                wv: np.ndarray, wo: np.ndarray):
    """Multi-head self-attention on x [..., n, d_model].

    Per-head projections wq/wk/wv are [heads, d_model, d_head]; the
    concatenated heads go through wo [heads*d_head, d_model].
    Returns (out, cache).
    """
    h, d_model, d_head = wq.shape
    if x.shape[-1] != d_model:
        raise ArgumentError(f"input dim {x.shape[-1]} != d_model {d_model}")
    if wo.shape[0] != h * wv.shape[-1]:
        raise ArgumentError(
            f"wo expects {wo.shape[0]} inputs but heads concat to {h * wv.shape[-1]}")
    # [..., n, d] x [h, d, dk] -> [..., h, n, dk]
    q = np.einsum("...nd,hdk->...hnk", x, wq)
    k = np.einsum("...nd,hdk->...hnk", x, wk)
    v = np.einsum("...nd,hdk->...hnk", x, wv)
    heads, att_cache = attention_forward(q, k, v)
    concat = np.swapaxes(heads, -3, -2)  # [..., n, h, dk]
    concat = concat.reshape(*concat.shape[:-2], h * wv.shape[-1])
    out = concat @ wo
    return out, (x, wq, wk, wv, wo, att_cache, concat)


def mha_backward(dout: np.ndarray, cache):
    x, wq, wk, wv, wo, att_cache, concat = cache
    h, _, d_head = wv.shape
    flat_c = concat.reshape(-1, concat.shape[-1])
    flat_do = dout.reshape(-1, dout.shape[-1])
    dwo = flat_c.T @ flat_do
    dconcat = (flat_do @ wo.T).reshape(concat.shape)
    dheads = np.swapaxes(
        dconcat.reshape(*concat.shape[:-1], h, d_head), -3, -2)
    dq, dk, dv = attention_backward(dheads, att_cache)
    dx = np.einsum("...hnk,hdk->...nd", dq, wq)
    dx += np.einsum("...hnk,hdk->...nd", dk, wk)
    dx += np.einsum("...hnk,hdk->...nd", dv, wv)
    n, d = x.shape[-2], x.shape[-1]
    xf = x.reshape(-1, n, d)
    dwq = np.einsum("bnd,bhnk->hdk", xf, dq.reshape(-1, h, n, d_head))
    dwk = np.einsum("bnd,bhnk->hdk", xf, dk.reshape(-1, h, n, d_head))
    dwv = np.einsum("bnd,bhnk->hdk", xf, dv.reshape(-1, h, n, d_head))
    return dx, dwq, dwk, dwv, dwo


def multi_head_attention(x: np.ndarray, wq: np.ndarray, wk: np.ndarray,
                         wv: np.ndarray, wo: np.ndarray) -> np.ndarray:
    """Concat of per-head attentions times the output projection."""
    out, _ = mha_forward(np.asarray(x, float), wq, wk, wv, wo)
    return out


# ---------------------------------------------------------------------------
# convolution / pooling (stride-1 valid conv; pooling stride = window)

def _as_batched_image(x: np.ndarray) -> tuple[np.ndarray, int]:
    """Normalize [H,W] / [H,W,C] / [B,H,W,C] to 4-D; returns (array, ndim_in)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x[None, :, :, None], 2
    if x.ndim == 3:
        return x[None], 3
    if x.ndim == 4:
        return x, 4
    raise ArgumentError(f"expected 2/3/4-D image input, got shape {x.shape}")


def _as_kernel(k: np.ndarray) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    if k.ndim == 2:
        return k[:, :, None, None]
    if k.ndim == 4:
        return k
    raise ArgumentError(f"expected [kh,kw] or [kh,kw,cin,cout] kernel, got shape {k.shape}")


def conv2d_forward(x: np.ndarray, kernel: np.ndarray,
                   bias: np.ndarray | None = None) -> np.ndarray:
    """Valid cross-correlation with stride 1.

    x: [batch, h, w, c_in] (2-D/3-D inputs are promoted), kernel:
    [kh, kw, c_in, c_out]. Output spatial size shrinks by kernel-1.
    """
    xb, ndim_in = _as_batched_image(x)
    k = _as_kernel(kernel)
    kh, kw, cin, cout = k.shape
    b_, h_, w_, c_ = xb.shape
    if c_ != cin:
        raise ArgumentError(f"conv: input channels {c_} != kernel channels {cin}")
    if kh > h_ or kw > w_:
        raise ArgumentError(f"kernel {kh}x{kw} larger than input {h_}x{w_}")
    ho, wo = h_ - kh + 1, w_ - kw + 1
    out = np.zeros((b_, ho, wo, cout))
    for a in range(kh):
        for b2 in range(kw):
            out += xb[:, a:a + ho, b2:b2 + wo, :] @ k[a, b2]
    if bias is not None:
        out += bias
    if ndim_in == 2:
        return out[0, :, :, 0]
    if ndim_in == 3:
        return out[0]
    return out


def conv2d_backward(dout: np.ndarray, x: np.ndarray, kernel: np.ndarray):
    """Returns (dx, dkernel, dbias) for the 4-D forward."""
    kh, kw, cin, cout = kernel.shape
    b_, ho, wo, _ = dout.shape
    dx = np.zeros_like(x)
    dk = np.zeros_like(kernel)
    for a in range(kh):
        for b2 in range(kw):
            patch = x[:, a:a + ho, b2:b2 + wo, :]
            dk[a, b2] = np.einsum("bijc,bijo->co", patch, dout)
            dx[:, a:a + ho, b2:b2 + wo, :] += dout @ kernel[a, b2].T
    dbias = dout.sum(axis=(0, 1, 2))
    return dx, dk, dbias


def pool2d_forward(x: np.ndarray, window: tuple[int, int], mode: str = "max"):
    """Non-overlapping pooling (stride = window, no padding).

    Returns (out, cache). The window must divide the spatial dims exactly.
    """
    xb, ndim_in = _as_batched_image(x)
    n, m = window
    b_, h_, w_, c_ = xb.shape
    if n < 1 or m < 1 or h_ % n or w_ % m:
        raise ArgumentError(f"window {window} must divide spatial dims ({h_}, {w_})")
    tiles = xb.reshape(b_, h_ // n, n, w_ // m, m, c_)
    if mode == "avg":
        out = tiles.mean(axis=(2, 4))
        cache = (xb.shape, window, mode, None, ndim_in)
    elif mode == "max":
        flat = tiles.transpose(0, 1, 3, 5, 2, 4).reshape(b_, h_ // n, w_ // m, c_, n * m)
        arg = flat.argmax(axis=-1)  # first max wins ties
        out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        cache = (xb.shape, window, mode, arg, ndim_in)
    else:
        raise ArgumentError(f"mode must be 'max' or 'avg', got {mode!r}")
    if ndim_in == 2:
        return out[0, :, :, 0], cache
    if ndim_in == 3:
        return out[0], cache
    return out, cache


def pool2d_backward(dout: np.ndarray, cache) -> np.ndarray:
    (b_, h_, w_, c_), (n, m), mode, arg, ndim_in = cache
    dout4 = dout
    if ndim_in == 2:
        dout4 = dout[None, :, :, None]
    elif ndim_in == 3:
        dout4 = dout[None]
    if mode == "avg":
        scaled = dout4 / (n * m)
        dx = np.broadcast_to(
            scaled[:, :, None, :, None, :], (b_, h_ // n, n, w_ // m, m, c_)
        ).reshape(b_, h_, w_, c_).copy()
    else:
        dflat = np.zeros((b_, h_ // n, w_ // m, c_, n * m))
        np.put_along_axis(dflat, arg[..., None], dout4[..., None], axis=-1)
        dx = dflat.reshape(b_, h_ // n, w_ // m, c_, n, m) \
                  .transpose(0, 1, 4, 2, 5, 3).reshape(b_, h_, w_, c_)
    if ndim_in == 2:
        return dx[0, :, :, 0]
    if ndim_in == 3:
        return dx[0]
    return dx


def global_average_pool(features: np.ndarray) -> np.ndarray:
    """Per-channel spatial mean: [w, h, c] -> [c] (or batched [b,w,h,c] -> [b,c])."""
    f = np.asarray(features, dtype=float)
    if f.ndim == 3:
        return f.mean(axis=(0, 1))
    if f.ndim == 4:
        return f.mean(axis=(1, 2))
    raise ArgumentError(f"expected [w,h,c] or [b,w,h,c], got shape {f.shape}")


# ---------------------------------------------------------------------------
# time pooling and stochastic regularizers

def temporal_max_pool(x: np.ndarray):
    """Max over the time axis of [batch, time, features]. Returns (out, argmax)."""
    arg = x.argmax(axis=1)
    out = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
    return out, arg


def temporal_max_pool_backward(dout: np.ndarray, arg: np.ndarray,
                               time_steps: int) -> np.ndarray:
    dx = np.zeros((dout.shape[0], time_steps, dout.shape[1]))
    np.put_along_axis(dx, arg[:, None, :], dout[:, None, :], axis=1)
    return dx


def gaussian_noise_forward(x: np.ndarray, sigma: float,
                           rng: np.random.Generator) -> np.ndarray:
    """Additive zero-mean noise; identity gradient."""
    if sigma <= 0:
        return x
    return x + sigma * rng.standard_normal(x.shape)


def dropout_forward(x: np.ndarray, rate: float, rng: np.random.Generator):
    """Inverted dropout. Returns (out, mask); backward is dout * mask."""
    if rate <= 0:
        return x, None
    if rate >= 1:
        raise ArgumentError(f"dropout rate must be < 1, got {rate}")
    mask = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask
