"""Adversarial losses and the spatiotemporal conditioning loss.

All functions accept numpy arrays or tape tensors.  With plain arrays they
return floats (or arrays for batched input); when any input is a
:class:`~animgan.ndl.Tensor` they return tensors so the loss can be
differentiated.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import ndl
from .ndl import ops

__all__ = [
    "LossConfig",
    "LossError",
    "main_joint_weights",
    "phi",
    "smoothness",
    "st_loss",
    "batch_st_loss",
    "generator_loss",
    "discriminator_loss",
]

log = logging.getLogger(__name__)


class LossError(ValueError):
    pass


@dataclass
class LossConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    eps: float = 1e-8
    batch_size: int = 8
    delta: float = 1e-6

    def __post_init__(self):
        if not (0.0 <= self.lambda1 <= 1.0 and 0.0 <= self.lambda2 <= 1.0):
            raise LossError("lambda1 and lambda2 must lie in [0, 1]")
        if not self.eps > 0:
            raise LossError("eps must be positive")
        if self.batch_size < 1:
            raise LossError("mini-batch size must be >= 1")
        if not 0 < self.delta < 0.5:
            raise LossError("score clamp delta must lie in (0, 0.5)")


def _wrap(args):
    differentiable = any(isinstance(a, ndl.Tensor) for a in args)
    return differentiable, [ndl.as_tensor(a) for a in args]


def _out(t, differentiable):
    if differentiable:
        return t
    return float(t.data) if t.data.ndim == 0 else t.data


def main_joint_weights(main, n_joints=21, batch_shape=()):
    """Per-joint averaging weights: 1/|main| on main joints, 0 elsewhere.

    ``main`` is one collection of joint indices, or one collection per
    batch item when ``batch_shape`` is non-empty.
    """
    if len(batch_shape) == 0:
        main = [main]
    w = np.zeros((len(main), n_joints))
    for i, m in enumerate(main):
        idx = sorted(set(int(j) for j in m))
        if not idx:
            raise LossError("main joint set is empty")
        if idx[0] < 0 or idx[-1] >= n_joints:
            raise LossError(f"main joint index out of range: {idx}")
        w[i, idx] = 1.0 / len(idx)
    return w.reshape(tuple(batch_shape) + (n_joints,))


def _velocity(p, fps):
    # first-frame velocity is zero
    n = p.shape[-3]
    idx_prev = np.concatenate([[0], np.arange(n - 1)])
    return (p - ops.take(p, idx_prev, axis=-3)) * fps


def _frame_terms(d, weights, fps):
    """sum_j w_j (|d_j(t)|^2 + |dv_j(t)|^2) per frame; d is (..., F, J, 3)."""
    dv = _velocity(d, fps)
    per_joint = ops.sum(ops.square(d), axis=-1) + ops.sum(ops.square(dv), axis=-1)
    return ops.sum(per_joint * ndl.Tensor(weights[..., None, :]), axis=-1)


def phi(a, b, main, fps):
    """Mean over frames and main joints of squared position plus velocity distance.

    ``a`` and ``b`` are hip-relative joint positions (..., F, J, 3) in cm;
    velocities are (p(t) - p(t-1)) * fps with the first frame's set to zero.
    """
    differentiable, (a, b) = _wrap((a, b))
    if a.shape != b.shape:
        raise LossError(f"sequence shapes differ: {a.shape} vs {b.shape}")
    if a.ndim < 3 or a.shape[-3] < 1:
        raise LossError("need at least one frame")
    w = main_joint_weights(main, a.shape[-2], a.shape[:-3])
    val = ops.mean(_frame_terms(a - b, w, fps), axis=-1)
    return _out(val, differentiable)


def smoothness(y, main, fps):
    """Mean over consecutive frame pairs of the frame-to-frame position+velocity distance."""
    differentiable, (y,) = _wrap((y,))
    n = y.shape[-3]
    if n < 1:
        raise LossError("need at least one frame")
    w = main_joint_weights(main, y.shape[-2], y.shape[:-3])
    if n == 1:
        return _out(ndl.Tensor(np.zeros(y.shape[:-3])), differentiable)
    v = _velocity(y, fps)
    later = np.arange(1, n)
    earlier = np.arange(0, n - 1)
    dp = ops.take(y, later, axis=-3) - ops.take(y, earlier, axis=-3)
    dv = ops.take(v, later, axis=-3) - ops.take(v, earlier, axis=-3)
    per_joint = ops.sum(ops.square(dp), axis=-1) + ops.sum(ops.square(dv), axis=-1)
    per_frame = ops.sum(per_joint * ndl.Tensor(w[..., None, :]), axis=-1)
    return _out(ops.mean(per_frame, axis=-1), differentiable)


def _st_terms(x, y, main, fps, config):
    cond = phi(x, y, main, fps)
    smooth = smoothness(y, main, fps)
    return config.lambda1 * ndl.as_tensor(cond) + config.lambda2 * ndl.as_tensor(smooth)


def st_loss(input_seq, generated_seq, main, fps, config=None):
    """lambda1 * phi(input, generated) + lambda2 * smoothness(generated) + eps, for one pair."""
    config = config or LossConfig()
    differentiable, (x, y) = _wrap((input_seq, generated_seq))
    if x.shape != y.shape:
        raise LossError("input and generated sequences are not aligned")
    if config.lambda1 == 0 and config.lambda2 == 0:
        # exact eps, no dependence on the sequences
        val = ops.mul(ops.sum(y), 0.0) + config.eps
        return _out(val, differentiable)
    return _out(_st_terms(x, y, main, fps, config) + config.eps, differentiable)


def batch_st_loss(inputs, generated, mains, fps, config=None):
    """Sum over batch items of the weighted terms, plus eps added once."""
    config = config or LossConfig()
    differentiable, (x, y) = _wrap((inputs, generated))
    if x.shape != y.shape:
        raise LossError("input and generated batches are not aligned")
    per_item = _st_terms(x, y, mains, fps, config)
    return _out(ops.sum(per_item) + config.eps, differentiable), per_item


def _clamped(scores, delta, what):
    s = ndl.as_tensor(scores)
    bad = np.sum((s.data <= 0.0) | (s.data >= 1.0))
    if bad:
        log.warning("%d %s score(s) outside (0, 1) before clamping", int(bad), what)
    return ops.clip(s, delta, 1.0 - delta)


def generator_loss(fake_scores, st_values=0.0, config=None):
    """sum_i log(1 - D(G(z_i | x_i))) + the conditioning loss."""
    config = config or LossConfig()
    differentiable, (s, st) = _wrap((fake_scores, st_values))
    s = _clamped(s, config.delta, "fake")
    val = ops.sum(ops.log(1.0 - s)) + ops.sum(st)
    return _out(val, differentiable)


def discriminator_loss(real_scores, fake_scores, real_label=1.0, config=None):
    """-sum_i [label * log D(y_i | x_i)] - sum_i log(1 - D(G(z_i | x_i))).

    A ``real_label`` below one gives one-sided label smoothing.  Extra fake
    items (hard negatives) may simply be appended to ``fake_scores``.
    """
    config = config or LossConfig()
    differentiable, (r, f) = _wrap((real_scores, fake_scores))
    r = _clamped(r, config.delta, "real")
    f = _clamped(f, config.delta, "fake")
    val = -(real_label * ops.sum(ops.log(r)) + ops.sum(ops.log(1.0 - f)))
    return _out(val, differentiable)
