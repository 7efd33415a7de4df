"""Differentiable micro-models: benchmark objectives, layer primitives with
hand-derived backward passes, recurrent cells, transformer encoder blocks,
and the classifier compositions used as swarm loss providers."""

from .base import (
    ImageBatch,
    LossModel,
    ParamLayout,
    SequenceBatch,
    finite_diff_gradient,
)
from .benchmarks import (
    BenchmarkModel,
    benchmark_model,
    rastrigin_eval_grad,
    rosenbrock_eval_grad,
    sphere_eval_grad,
)
from .classifiers import (
    Arch,
    ConvClassifier,
    MLPClassifier,
    SequenceClassifier,
    SequenceModelConfig,
    build_sequence_classifier,
)
from .layers import (
    activation,
    conv2d_forward,
    cross_entropy,
    global_average_pool,
    multi_head_attention,
    pool2d_forward,
    position_encoding,
    position_encoding_matrix,
    scaled_dot_attention,
    softmax,
)
from .recurrent import bidirectional_combine, gru_cell, lstm_cell, rnn_cell
from .transformer import transformer_encoder_block

__all__ = [
    "Arch", "BenchmarkModel", "ConvClassifier", "ImageBatch", "LossModel",
    "MLPClassifier", "ParamLayout", "SequenceBatch", "SequenceClassifier",
    "SequenceModelConfig", "activation", "benchmark_model",
    "bidirectional_combine", "build_sequence_classifier", "conv2d_forward",
    "cross_entropy", "finite_diff_gradient", "global_average_pool",
    "gru_cell", "lstm_cell", "multi_head_attention", "pool2d_forward",
    "position_encoding", "position_encoding_matrix", "rastrigin_eval_grad",
    "rnn_cell", "rosenbrock_eval_grad", "scaled_dot_attention", "softmax",
    "sphere_eval_grad", "transformer_encoder_block",
]
