"""Differentiable operations on :class:`~animgan.ndl.tape.Tensor`."""

# ``sum`` and ``abs`` deliberately shadow the builtins inside this module.

import numpy as np
import scipy.sparse as sp

from .. import kernels
from .tape import accumulate, as_tensor, make


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, g)

    return make(a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g)
        accumulate(b, -g)

    return make(a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        accumulate(a, g * b.data)
        accumulate(b, g * a.data)

    return make(a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        accumulate(a, g / b.data)
        accumulate(b, -g * out / b.data)

    return make(out, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return make(-a.data, (a,), lambda g: accumulate(a, -g))


def square(a):
    a = as_tensor(a)
    return make(a.data * a.data, (a,), lambda g: accumulate(a, 2.0 * g * a.data))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return make(out, (a,), lambda g: accumulate(a, g * out))


def log(a):
    a = as_tensor(a)
    return make(np.log(a.data), (a,), lambda g: accumulate(a, g / a.data))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: accumulate(a, 0.5 * g / out))


def abs(a):
    a = as_tensor(a)
    return make(np.abs(a.data), (a,), lambda g: accumulate(a, g * np.sign(a.data)))


def clip(a, lo, hi):
    """Clamp; the gradient is passed only where the value was inside [lo, hi]."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make(np.clip(a.data, lo, hi), (a,), lambda g: accumulate(a, g * inside))


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return make(out, (a,), lambda g: accumulate(a, g * out * (1.0 - out)))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: accumulate(a, g * (1.0 - out * out)))


LEAKY_SLOPE = 0.01


def leaky_relu(a, slope=LEAKY_SLOPE):
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return make(a.data * scale, (a,), lambda g: accumulate(a, g * scale))


def dropout(a, rate, rng, training):
    """Inverted dropout: survivors are scaled by 1/(1-rate) at train time."""
    a = as_tensor(a)
    if not training or rate <= 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.random(a.data.shape) < keep) / keep
    return make(a.data * mask, (a,), lambda g: accumulate(a, g * mask))


# ---------------------------------------------------------------------------
# shape and reduction
# ---------------------------------------------------------------------------


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.data.shape))

    return make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.data.shape[x] for x in np.atleast_1d(axis)])
    return mul(sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return make(a.data.reshape(shape), (a,), lambda g: accumulate(a, g.reshape(a.data.shape)))


def transpose(a, axes):
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make(np.transpose(a.data, axes), (a,), lambda g: accumulate(a, np.transpose(g, inv)))


def getitem(a, idx):
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        accumulate(a, full)

    return make(a.data[idx], (a,), backward)


def take(a, indices, axis):
    """Select ``indices`` along ``axis`` (repeats allowed)."""
    a = as_tensor(a)
    indices = np.asarray(indices)

    def backward(g):
        full = np.zeros_like(a.data)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        accumulate(a, full)

    return make(np.take(a.data, indices, axis=axis), (a,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=axis)):
            accumulate(t, part)

    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def broadcast_to(a, shape):
    a = as_tensor(a)
    return make(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: accumulate(a, g))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """``a @ b`` with numpy broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            if b.data.ndim == 2 and a.data.ndim > 2:
                a2 = a.data.reshape(-1, a.data.shape[-1])
                accumulate(b, a2.T @ g.reshape(-1, g.shape[-1]))
            else:
                accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return make(a.data @ b.data, (a, b), backward)


def spmm(adj, x):
    """Apply a fixed (sparse or dense) N x N matrix along axis -2 of ``x``.

    ``x`` has shape (..., N, C).  The matrix carries no gradient.
    """
    x = as_tensor(x)
    is_sparse = sp.issparse(adj)
    adj_t = adj.T.tocsr() if is_sparse else adj.T

    def apply(m, v):
        lead, n, c = v.shape[:-2], v.shape[-2], v.shape[-1]
        flat = np.moveaxis(v.reshape((-1, n, c)), 1, 0).reshape(n, -1)
        res = m @ flat
        return np.moveaxis(np.asarray(res).reshape(m.shape[0], -1, c), 0, 1).reshape(lead + (m.shape[0], c))

    return make(apply(adj, x.data), (x,), lambda g: accumulate(x, apply(adj_t, g)))


# ---------------------------------------------------------------------------
# fused kernels
# ---------------------------------------------------------------------------


def lstm(x, wx, wh, b, reverse=False):
    """Run an LSTM over axis 1 of ``x`` (B, T, D); returns hidden states (B, T, H).

    Gates are ordered (input, forget, cell, output); initial states are zero.
    With ``reverse`` the sequence is consumed from the last step and the
    output is re-aligned to the original time order.
    """
    x, wx, wh, b = (as_tensor(t) for t in (x, wx, wh, b))
    xd = x.data[:, ::-1] if reverse else x.data
    xp = xd @ wx.data + b.data
    hs, cs, gates = kernels.lstm_forward(xp, wh.data)
    out = hs[:, ::-1] if reverse else hs

    def backward(g):
        g = g[:, ::-1] if reverse else g
        dxp, dwh = kernels.lstm_backward(g, wh.data, hs, cs, gates)
        if x.requires_grad:
            dx = dxp @ wx.data.T
            accumulate(x, dx[:, ::-1] if reverse else dx)
        if wx.requires_grad:
            accumulate(wx, xd.reshape(-1, xd.shape[-1]).T @ dxp.reshape(-1, dxp.shape[-1]))
        accumulate(wh, dwh)
        accumulate(b, dxp.sum(axis=(0, 1)))

    return make(np.ascontiguousarray(out), (x, wx, wh, b), backward)


def quat_normalize(q, eps=1e-8):
    """Per-quaternion unit normalisation with w >= 0 over the last axis (size 4).

    Vectors with norm below ``eps`` become the identity and pass no gradient.
    """
    q = as_tensor(q)
    n = np.linalg.norm(q.data, axis=-1, keepdims=True)
    small = n < eps
    safe = np.where(small, 1.0, n)
    sign = np.where(q.data[..., :1] < 0.0, -1.0, 1.0)
    u = q.data / safe
    ident = np.zeros_like(q.data)
    ident[..., 0] = 1.0
    out = np.where(small, ident, sign * u)

    def backward(g):
        g = g * sign
        radial = np.sum(g * u, axis=-1, keepdims=True)
        accumulate(q, np.where(small, 0.0, (g - radial * u) / safe))

    return make(out, (q,), backward)


def forward_kinematics(q, skeleton):
    """Hip-relative positions (..., J, 3) from local unit quaternions (..., J, 4)."""
    q = as_tensor(q)
    shape = q.data.shape
    flat = q.data.reshape(-1, shape[-2], 4)
    offsets = skeleton.offsets
    parents = skeleton.parent_array
    pos, glob = kernels.fk_forward(flat, offsets, parents)

    def backward(g):
        dq = kernels.fk_backward(flat, glob, offsets, parents, g.reshape(-1, shape[-2], 3))
        accumulate(q, dq.reshape(shape))

    return make(pos.reshape(shape[:-1] + (3,)), (q,), backward)


