"""Small differentiable-computation core used by every trained network."""

from . import ops
from .gradcheck import analytic_gradients, gradient_check
from .layers import LSTM, BiLSTM, Dense, GraphConv, Module, glorot, graph_conv
from .optim import SGD, Adam, linear_decay_lr, sgd_lr
from .tape import NonFiniteError, Param, Tape, Tensor, as_tensor

__all__ = [
    "ops",
    "Tape",
    "Tensor",
    "Param",
    "as_tensor",
    "NonFiniteError",
    "Module",
    "Dense",
    "LSTM",
    "BiLSTM",
    "GraphConv",
    "graph_conv",
    "glorot",
    "SGD",
    "Adam",
    "sgd_lr",
    "linear_decay_lr",
    "gradient_check",
    "analytic_gradients",
]
