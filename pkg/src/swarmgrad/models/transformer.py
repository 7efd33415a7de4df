"""Transformer encoder block: multi-head self-attention and a position-wise
feed-forward network, each wrapped in a residual connection followed by
layer normalization."""

from __future__ import annotations

import numpy as np

from .layers import (
    fc_backward,
    fc_forward,
    layer_norm_backward,
    layer_norm_forward,
    mha_backward,
    mha_forward,
)

__all__ = ["encoder_block_param_shapes", "encoder_block_forward",
           "encoder_block_backward", "transformer_encoder_block"]


def encoder_block_param_shapes(d_model: int, num_heads: int,
                               ffn_dim: int) -> dict[str, tuple[int, ...]]:
    """Named parameter shapes of one block (head dim = d_model // heads)."""
    d_head = d_model // num_heads
    return {
        "wq": (num_heads, d_model, d_head),
        "wk": (num_heads, d_model, d_head),
        "wv": (num_heads, d_model, d_head),
        "wo": (num_heads * d_head, d_model),
        "ln1_g": (d_model,),
        "ln1_b": (d_model,),
        "ffn_w1": (d_model, ffn_dim),
        "ffn_b1": (ffn_dim,),
        "ffn_w2": (ffn_dim, d_model),
        "ffn_b2": (d_model,),
        "ln2_g": (d_model,),
        "ln2_b": (d_model,),
    }


def encoder_block_forward(x: np.ndarray, p: dict[str, np.ndarray]):
    """y = LN(x + MHA(x)); out = LN(y + FFN(y)), FFN = relu dense + dense.

    Returns (out, cache).
    """
    attn, mha_cache = mha_forward(x, p["wq"], p["wk"], p["wv"], p["wo"])
    y, ln1_cache = layer_norm_forward(x + attn, p["ln1_g"], p["ln1_b"])
    pre = fc_forward(y, p["ffn_w1"], p["ffn_b1"])
    hidden = np.maximum(pre, 0.0)
    ffn = fc_forward(hidden, p["ffn_w2"], p["ffn_b2"])
    out, ln2_cache = layer_norm_forward(y + ffn, p["ln2_g"], p["ln2_b"])
    return out, (mha_cache, ln1_cache, ln2_cache, y, pre, hidden)


def encoder_block_backward(dout: np.ndarray, cache, p: dict[str, np.ndarray]):
    """Returns (dx, grads) with grads keyed like the parameter shapes."""
    mha_cache, ln1_cache, ln2_cache, y, pre, hidden = cache
    grads = {}

    dsum2, grads["ln2_g"], grads["ln2_b"] = layer_norm_backward(dout, ln2_cache)
    dhidden, grads["ffn_w2"], grads["ffn_b2"] = fc_backward(dsum2, hidden, p["ffn_w2"])
    dpre = dhidden * (pre > 0)
    dy_ffn, grads["ffn_w1"], grads["ffn_b1"] = fc_backward(dpre, y, p["ffn_w1"])
    dy = dsum2 + dy_ffn

    dsum1, grads["ln1_g"], grads["ln1_b"] = layer_norm_backward(dy, ln1_cache)
    dx_attn, grads["wq"], grads["wk"], grads["wv"], grads["wo"] = \
        mha_backward(dsum1, mha_cache)
    dx = dsum1 + dx_attn
    return dx, grads


def transformer_encoder_block(x: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    """Forward-only convenience wrapper over ``encoder_block_forward``."""
    out, _ = encoder_block_forward(np.asarray(x, dtype=float), params)
    return out
