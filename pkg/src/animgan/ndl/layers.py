"""Parameterised layers built from :mod:`animgan.ndl.ops`."""

import numpy as np

from . import ops
from .tape import Param


class Module:
    """Container that discovers :class:`Param` and sub-module attributes in definition order."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Param):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{prefix}{name}.{i}", item

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise KeyError(f"state mismatch; missing={missing} unexpected={extra}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()

    def n_parameters(self):
        return sum(p.data.size for p in self.parameters())


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Dense(Module):
    def __init__(self, n_in, n_out, rng=None):
        self.weight = Param(glorot(rng, n_in, n_out) if rng is not None else np.zeros((n_in, n_out)))
        self.bias = Param(np.zeros(n_out))

    def __call__(self, x):
        return ops.matmul(x, self.weight) + self.bias


class LSTM(Module):
    """Unidirectional LSTM; forget-gate bias starts at 1."""

    def __init__(self, n_in, n_hidden, rng=None):
        h = n_hidden
        self.n_hidden = h
        if rng is None:
            self.wx = Param(np.zeros((n_in, 4 * h)))
            self.wh = Param(np.zeros((h, 4 * h)))
            self.b = Param(np.zeros(4 * h))
        else:
            self.wx = Param(glorot(rng, n_in, 4 * h))
            self.wh = Param(glorot(rng, h, 4 * h))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0
            self.b = Param(b)

    def __call__(self, x, reverse=False):
        return ops.lstm(x, self.wx, self.wh, self.b, reverse=reverse)


class BiLSTM(Module):
    """Forward and time-reversed LSTMs, outputs concatenated per step (width 2H)."""

    def __init__(self, n_in, n_hidden, rng=None):
        self.fwd = LSTM(n_in, n_hidden, rng)
        self.bwd = LSTM(n_in, n_hidden, rng)

    def __call__(self, x):
        return ops.concat([self.fwd(x), self.bwd(x, reverse=True)], axis=-1)


def graph_conv(features, norm_adjacency, weights):
    """``norm_adjacency @ features @ weights`` for features shaped (..., N, C)."""
    return ops.matmul(ops.spmm(norm_adjacency, features), weights)


class GraphConv(Module):
    def __init__(self, n_in, n_out, rng=None):
        self.weight = Param(glorot(rng, n_in, n_out) if rng is not None else np.zeros((n_in, n_out)))
        self.bias = Param(np.zeros(n_out))

    def __call__(self, x, norm_adjacency):
        return graph_conv(x, norm_adjacency, self.weight) + self.bias
