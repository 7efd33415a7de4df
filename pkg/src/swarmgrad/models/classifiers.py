"""Trainable sequence and image classifiers assembled from the layer
primitives, each exposing the flat-vector LossModel interface.

The sequence pipeline mirrors the intended deployment shape at desk scale:
a fully connected feature projection standing in for a convolutional
backbone, then either position-encoded encoder blocks or an unrolled
recurrent module, global max pooling over time, and a dense softmax head
with optional Gaussian noise and dropout in training mode.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError
from .base import ImageBatch, LossModel, ParamLayout, SequenceBatch
from .layers import (
    conv2d_backward,
    conv2d_forward,
    dropout_forward,
    fc_backward,
    fc_forward,
    gaussian_noise_forward,
    pool2d_backward,
    pool2d_forward,
    position_encoding_matrix,
    softmax_xent,
    softmax_xent_backward,
    temporal_max_pool,
    temporal_max_pool_backward,
)
from .recurrent import (
    gru_seq_backward,
    gru_seq_forward,
    lstm_seq_backward,
    lstm_seq_forward,
    rnn_seq_backward,
    rnn_seq_forward,
)
from .transformer import (
    encoder_block_backward,
    encoder_block_forward,
    encoder_block_param_shapes,
)

__all__ = ["Arch", "SequenceModelConfig", "SequenceClassifier",
           "MLPClassifier", "ConvClassifier", "build_sequence_classifier"]


class Arch(enum.Enum):
    TRANSFORMER = "transformer"
    RNN = "rnn"
    LSTM = "lstm"
    GRU = "gru"
    BILSTM = "bilstm"


_LSTM_NAMES = ["W_fh", "W_fx", "b_f", "W_ih", "W_ix", "b_i",
               "W_ch", "W_cx", "b_c", "W_oh", "W_ox", "b_o"]
_GRU_NAMES = ["W_rh", "W_rx", "b_r", "W_zh", "W_zx", "b_z",
              "W_ch", "W_cx", "b_c"]
_RNN_NAMES = ["W_h", "W_x", "b"]


def _cell_shapes(names: list[str], in_dim: int, hidden: int) -> dict[str, tuple[int, ...]]:
    shapes = {}
    for n in names:
        if n.startswith("b"):
            shapes[n] = (hidden,)
        elif n.endswith("h"):
            shapes[n] = (hidden, hidden)
        else:
            shapes[n] = (in_dim, hidden)
    return shapes


@dataclass
class SequenceModelConfig:
    """Dimensions and regularizer settings for one sequence classifier."""

    arch: Arch = Arch.TRANSFORMER
    input_dim: int = 8
    seq_len: int = 16
    num_classes: int = 4
    d_model: int = 16          # feature projection width
    hidden_units: int = 16     # recurrent state size
    num_blocks: int = 2        # stacked encoder blocks
    num_heads: int = 2
    ffn_dim: int = 32
    head_dim: int = 64         # dense classifier width
    noise_sigma: float = 0.1   # training-mode additive noise
    dropout_rate: float = 0.4  # training-mode dropout

    def __post_init__(self):
        if isinstance(self.arch, str):
            self.arch = Arch(self.arch)
        if self.arch is Arch.TRANSFORMER:
            if self.d_model % self.num_heads:
                raise ArgumentError(
                    f"d_model={self.d_model} must be divisible by num_heads={self.num_heads}")
            if self.d_model % 2:
                raise ArgumentError("d_model must be even for the position encoding")
        for name in ("input_dim", "seq_len", "num_classes", "d_model",
                     "hidden_units", "num_blocks", "num_heads", "ffn_dim", "head_dim"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")


class _LayoutModel(LossModel):
    """Shared plumbing: layout-driven init and flat gradient assembly."""

    layout: ParamLayout

    @property
    def dim(self) -> int:
        return self.layout.size

    def init_params(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        flat, views = self.layout.zeros()
        for name in self.layout.names():
            shape = self.layout.shape(name)
            v = views[name]
            if name.endswith("_g"):  # layer-norm scales start at identity
                v[...] = 1.0
            elif len(shape) == 1:
                v[...] = 0.0  # biases and layer-norm shifts
            else:
                fan_in = int(np.prod(shape[:-1]))
                v[...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        return flat

    def _flatten_grads(self, grads: dict[str, np.ndarray]) -> np.ndarray:
        flat, views = self.layout.zeros()
        for name, g in grads.items():
            views[name] += g
        return flat


class SequenceClassifier(_LayoutModel):
    """Projection + temporal module + max-pool + dense softmax head."""

    def __init__(self, config: SequenceModelConfig):
        self.config = config
        c = config
        shapes: dict[str, tuple[int, ...]] = {
            "proj_w": (c.input_dim, c.d_model),
            "proj_b": (c.d_model,),
        }
        if c.arch is Arch.TRANSFORMER:
            for b in range(c.num_blocks):
                for name, shape in encoder_block_param_shapes(
                        c.d_model, c.num_heads, c.ffn_dim).items():
                    shapes[f"blk{b}.{name}"] = shape
            pooled = c.d_model
        elif c.arch is Arch.RNN:
            shapes.update(_cell_shapes(_RNN_NAMES, c.d_model, c.hidden_units))
            pooled = c.hidden_units
        elif c.arch is Arch.LSTM:
            shapes.update(_cell_shapes(_LSTM_NAMES, c.d_model, c.hidden_units))
            pooled = c.hidden_units
        elif c.arch is Arch.GRU:
            shapes.update(_cell_shapes(_GRU_NAMES, c.d_model, c.hidden_units))
            pooled = c.hidden_units
        else:  # BiLSTM: independent forward and backward passes, concatenated
            for prefix in ("fwd.", "bwd."):
                for name, shape in _cell_shapes(_LSTM_NAMES, c.d_model, c.hidden_units).items():
                    shapes[prefix + name] = shape
            pooled = 2 * c.hidden_units
        shapes.update({
            "head_w1": (pooled, c.head_dim),
            "head_b1": (c.head_dim,),
            "head_w2": (c.head_dim, c.num_classes),
            "head_b2": (c.num_classes,),
        })
        self.layout = ParamLayout(shapes)
        self._pooled = pooled
        if c.arch is Arch.TRANSFORMER:
            self._pe = position_encoding_matrix(c.seq_len, c.d_model)

    # -- forward/backward -------------------------------------------------

    def _check_batch(self, batch: SequenceBatch):
        c = self.config
        b_, l_, g_ = batch.inputs.shape
        if l_ != c.seq_len or g_ != c.input_dim:
            raise ArgumentError(
                f"batch shaped [*, {l_}, {g_}], model expects [*, {c.seq_len}, {c.input_dim}]")
        if batch.num_classes != c.num_classes:
            raise ArgumentError(
                f"batch has {batch.num_classes} classes, model expects {c.num_classes}")

    def _temporal_forward(self, proj: np.ndarray, p: dict[str, np.ndarray]):
        c = self.config
        if c.arch is Arch.TRANSFORMER:
            z = proj + self._pe
            caches = []
            for b in range(c.num_blocks):
                blk = {k: p[f"blk{b}.{k}"] for k in encoder_block_param_shapes(
                    c.d_model, c.num_heads, c.ffn_dim)}
                z, cache = encoder_block_forward(z, blk)
                caches.append((blk, cache))
            return z, caches
        if c.arch is Arch.RNN:
            return rnn_seq_forward(proj, p)
        if c.arch is Arch.LSTM:
            return lstm_seq_forward(proj, p)
        if c.arch is Arch.GRU:
            return gru_seq_forward(proj, p)
        fwd_w = {k: p["fwd." + k] for k in _LSTM_NAMES}
        bwd_w = {k: p["bwd." + k] for k in _LSTM_NAMES}
        h_fwd, cache_f = lstm_seq_forward(proj, fwd_w)
        h_bwd_rev, cache_b = lstm_seq_forward(proj[:, ::-1, :], bwd_w)
        seq = np.concatenate([h_fwd, h_bwd_rev[:, ::-1, :]], axis=2)
        return seq, (cache_f, cache_b, fwd_w, bwd_w)

    def _temporal_backward(self, dseq: np.ndarray, cache, p: dict[str, np.ndarray]):
        c = self.config
        grads: dict[str, np.ndarray] = {}
        if c.arch is Arch.TRANSFORMER:
            dz = dseq
            for b in range(c.num_blocks - 1, -1, -1):
                blk, blk_cache = cache[b]
                dz, blk_grads = encoder_block_backward(dz, blk_cache, blk)
                for k, g in blk_grads.items():
                    grads[f"blk{b}.{k}"] = g
            return dz, grads
        if c.arch is Arch.RNN:
            dproj, grads = rnn_seq_backward(dseq, cache, p)
            return dproj, grads
        if c.arch is Arch.LSTM:
            dproj, grads = lstm_seq_backward(dseq, cache, p)
            return dproj, grads
        if c.arch is Arch.GRU:
            dproj, grads = gru_seq_backward(dseq, cache, p)
            return dproj, grads
        cache_f, cache_b, fwd_w, bwd_w = cache
        h = c.hidden_units
        dproj_f, grads_f = lstm_seq_backward(dseq[:, :, :h], cache_f, fwd_w)
        dproj_b, grads_b = lstm_seq_backward(
            np.ascontiguousarray(dseq[:, ::-1, h:]), cache_b, bwd_w)
        for k, g in grads_f.items():
            grads["fwd." + k] = g
        for k, g in grads_b.items():
            grads["bwd." + k] = g
        return dproj_f + dproj_b[:, ::-1, :], grads

    def _head_forward(self, params, batch, train, rng):
        c = self.config
        p = self.layout.unpack(params)
        x = batch.inputs
        proj = fc_forward(x, p["proj_w"], p["proj_b"])
        seq, tcache = self._temporal_forward(proj, p)
        pooled, arg = temporal_max_pool(seq)

        reg = pooled
        mask = None
        if train and (c.noise_sigma > 0 or c.dropout_rate > 0):
            if rng is None:
                raise ArgumentError("train=True with stochastic layers needs an rng")
            reg = gaussian_noise_forward(reg, c.noise_sigma, rng)
            reg, mask = dropout_forward(reg, c.dropout_rate, rng)

        h1pre = fc_forward(reg, p["head_w1"], p["head_b1"])
        h1 = np.maximum(h1pre, 0.0)
        logits = fc_forward(h1, p["head_w2"], p["head_b2"])
        loss, probs = softmax_xent(logits, batch.labels)
        return loss, probs, (p, x, tcache, arg, reg, mask, h1pre, h1)

    def evaluate(self, params, batch, train=False, rng=None):
        self._check_params(params)
        self._check_batch(batch)
        loss, _, _ = self._head_forward(params, batch, train, rng)
        return loss

    def value_and_gradient(self, params, batch, train=False, rng=None):
        self._check_params(params)
        self._check_batch(batch)
        c = self.config
        loss, probs, cache = self._head_forward(params, batch, train, rng)
        p, x, tcache, arg, reg, mask, h1pre, h1 = cache

        dlogits = softmax_xent_backward(probs, batch.labels)
        dh1, dw2, db2 = fc_backward(dlogits, h1, p["head_w2"])
        dh1pre = dh1 * (h1pre > 0)
        dreg, dw1, db1 = fc_backward(dh1pre, reg, p["head_w1"])
        if mask is not None:
            dreg = dreg * mask
        dseq = temporal_max_pool_backward(dreg, arg, c.seq_len)
        dproj, grads = self._temporal_backward(dseq, tcache, p)
        _, dpw, dpb = fc_backward(dproj, x, p["proj_w"])

        grads.update({"head_w1": dw1, "head_b1": db1,
                      "head_w2": dw2, "head_b2": db2,
                      "proj_w": dpw, "proj_b": dpb})
        return loss, self._flatten_grads(grads)

    def logits(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        """Deterministic class scores for [batch, time, features] inputs."""
        p = self.layout.unpack(params)
        proj = fc_forward(inputs, p["proj_w"], p["proj_b"])
        seq, _ = self._temporal_forward(proj, p)
        pooled, _ = temporal_max_pool(seq)
        h1 = np.maximum(fc_forward(pooled, p["head_w1"], p["head_b1"]), 0.0)
        return fc_forward(h1, p["head_w2"], p["head_b2"])

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        return self.logits(params, inputs).argmax(axis=1)


class MLPClassifier(_LayoutModel):
    """Flattened-sequence baseline: dense, relu, dense, softmax."""

    def __init__(self, input_dim: int, seq_len: int, num_classes: int,
                 hidden: int = 32):
        self.input_dim, self.seq_len, self.num_classes = input_dim, seq_len, num_classes
        flat_in = input_dim * seq_len
        self.layout = ParamLayout({
            "w1": (flat_in, hidden), "b1": (hidden,),
            "w2": (hidden, num_classes), "b2": (num_classes,),
        })

    def evaluate(self, params, batch, train=False, rng=None):
        self._check_params(params)
        x = batch.inputs.reshape(len(batch), -1)
        return softmax_xent(self._logits_flat(params, x), batch.labels)[0]

    def _logits_flat(self, params, x):
        p = self.layout.unpack(params)
        h1 = np.maximum(fc_forward(x, p["w1"], p["b1"]), 0.0)
        return fc_forward(h1, p["w2"], p["b2"])

    def value_and_gradient(self, params, batch, train=False, rng=None):
        self._check_params(params)
        p = self.layout.unpack(params)
        x = batch.inputs.reshape(len(batch), -1)
        h1pre = fc_forward(x, p["w1"], p["b1"])
        h1 = np.maximum(h1pre, 0.0)
        logits = fc_forward(h1, p["w2"], p["b2"])
        loss, probs = softmax_xent(logits, batch.labels)

        dlogits = softmax_xent_backward(probs, batch.labels)
        dh1, dw2, db2 = fc_backward(dlogits, h1, p["w2"])
        dh1pre = dh1 * (h1pre > 0)
        _, dw1, db1 = fc_backward(dh1pre, x, p["w1"])
        return loss, self._flatten_grads({"w1": dw1, "b1": db1, "w2": dw2, "b2": db2})

    def predict(self, params: np.ndarray, inputs: np.ndarray) -> np.ndarray:
        x = inputs.reshape(inputs.shape[0], -1)
        return self._logits_flat(params, x).argmax(axis=1)


class ConvClassifier(_LayoutModel):
    """Toy image net: conv, relu, max-pool, dense softmax."""

    def __init__(self, height: int, width: int, channels: int, num_classes: int,
                 kernel: int = 3, filters: int = 4, pool: int = 2):
        ho, wo = height - kernel + 1, width - kernel + 1
        if ho % pool or wo % pool:
            raise ArgumentError(
                f"pool window {pool} must divide conv output ({ho}, {wo})")
        self.shape_in = (height, width, channels)
        self.num_classes = num_classes
        self.pool = pool
        self._flat = (ho // pool) * (wo // pool) * filters
        self.layout = ParamLayout({
            "conv_k": (kernel, kernel, channels, filters),
            "conv_b": (filters,),
            "fc_w": (self._flat, num_classes),
            "fc_b": (num_classes,),
        })

    def evaluate(self, params, batch: ImageBatch, train=False, rng=None):
        self._check_params(params)
        p = self.layout.unpack(params)
        conv = conv2d_forward(batch.inputs, p["conv_k"], p["conv_b"])
        pooled, _ = pool2d_forward(np.maximum(conv, 0.0),
                                   (self.pool, self.pool), mode="max")
        logits = fc_forward(pooled.reshape(len(batch), -1), p["fc_w"], p["fc_b"])
        return softmax_xent(logits, batch.labels)[0]

    def value_and_gradient(self, params, batch: ImageBatch, train=False, rng=None):
        self._check_params(params)
        p = self.layout.unpack(params)
        x = batch.inputs
        conv = conv2d_forward(x, p["conv_k"], p["conv_b"])
        act = np.maximum(conv, 0.0)
        pooled, pcache = pool2d_forward(act, (self.pool, self.pool), mode="max")
        flat = pooled.reshape(len(batch), -1)
        logits = fc_forward(flat, p["fc_w"], p["fc_b"])
        loss, probs = softmax_xent(logits, batch.labels)

        dlogits = softmax_xent_backward(probs, batch.labels)
        dflat, dfw, dfb = fc_backward(dlogits, flat, p["fc_w"])
        dpooled = dflat.reshape(pooled.shape)
        dact = pool2d_backward(dpooled, pcache)
        dconv = dact * (conv > 0)
        _, dk, db = conv2d_backward(dconv, x, p["conv_k"])
        return loss, self._flatten_grads(
            {"conv_k": dk, "conv_b": db, "fc_w": dfw, "fc_b": dfb})


def build_sequence_classifier(arch: Arch | str, **dims) -> SequenceClassifier:
    """Factory over SequenceModelConfig; dims are its keyword fields."""
    return SequenceClassifier(SequenceModelConfig(arch=Arch(arch) if isinstance(arch, str) else arch, **dims))
