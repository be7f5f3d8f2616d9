"""Conditional sequence generator: per-frame embedding + noise -> LSTM -> BiLSTM -> rotations."""

from dataclasses import dataclass

import numpy as np

from . import ndl
from .codec import EMBED_DIM
from .ndl import ops
from .skeleton import MotionSequence, TARGET_FPS, canonical_skeleton

__all__ = ["GeneratorError", "GeneratorNet", "NoiseSpec", "sample_noise", "generate", "generate_rotations", "NOISE_DIM", "IN_DIM", "OUT_DIM"]

NOISE_DIM = 30
IN_DIM = EMBED_DIM + NOISE_DIM  # 50
OUT_DIM = 21 * 4


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSpec:
    """Standard Gaussian noise, one 30-D draw per sequence or per frame."""

    mode: str = "sequence"
    dim: int = NOISE_DIM

    def __post_init__(self):
        if self.mode not in ("sequence", "frame"):
            raise GeneratorError(f"unknown noise mode {self.mode!r}")
        if self.dim != NOISE_DIM:
            raise GeneratorError(f"noise dimension is fixed at {NOISE_DIM}")


def sample_noise(rng, batch, k, spec=NoiseSpec()):
    """(batch, k, 30) noise; in sequence mode every frame repeats one draw."""
    if spec.mode == "sequence":
        z = rng.standard_normal((batch, 1, spec.dim))
        return np.repeat(z, k, axis=1)
    return rng.standard_normal((batch, k, spec.dim))


class GeneratorNet(ndl.Module):
    """dense(50->H) -> LSTM(H) -> BiLSTM(2H) -> dropout -> dense(2H->84).

    With ``rng=None`` every weight is zero, so every output joint is the
    identity rotation.
    """

    def __init__(self, hidden=64, rng=None, dropout=0.5):
        self.hidden = hidden
        self.dropout = dropout
        self.inp = ndl.Dense(IN_DIM, hidden, rng)
        self.lstm = ndl.LSTM(hidden, hidden, rng)
        self.bilstm = ndl.BiLSTM(hidden, hidden, rng)
        self.out = ndl.Dense(2 * hidden, OUT_DIM, rng)

    def __call__(self, condition, noise, rng=None, training=False):
        """condition (B, k, 20), noise (B, k, 30) -> unit quaternions (B, k, 21, 4)."""
        c = ndl.as_tensor(condition)
        z = ndl.as_tensor(noise)
        if c.shape[-1] != EMBED_DIM or z.shape[-1] != NOISE_DIM or c.shape[:-1] != z.shape[:-1]:
            raise GeneratorError(f"bad input shapes {c.shape} and {z.shape}")
        if c.shape[1] < 1:
            raise GeneratorError("need at least one frame")
        x = ops.concat([c, z], axis=-1)
        h = ops.leaky_relu(self.inp(x))
        h = self.lstm(h)
        h = self.bilstm(h)
        h = ops.dropout(h, self.dropout, rng, training)
        raw = self.out(h)
        B, k = c.shape[0], c.shape[1]
        return ops.quat_normalize(ops.reshape(raw, (B, k, 21, 4)))


def generate_rotations(net, condition, seed=0, spec=NoiseSpec(), training=False):
    """Rotations (k, 21, 4) for one condition sequence (k, 20)."""
    cond = np.asarray(condition, dtype=np.float64)
    if cond.ndim != 2 or cond.shape[0] < 1:
        raise GeneratorError("condition must be (k >= 1, 20)")
    if not np.all(np.isfinite(cond)):
        raise GeneratorError("non-finite condition")
    rng = np.random.default_rng(seed)
    noise = sample_noise(rng, 1, len(cond), spec)
    return net(cond[None], noise, rng, training).data[0]


def generate(net, condition, seed=0, spec=NoiseSpec(), training=False, fps=TARGET_FPS, label=None):
    """A generated :class:`MotionSequence` with one frame per condition frame."""
    rot = generate_rotations(net, condition, seed, spec, training)
    return MotionSequence(canonical_skeleton(), rot, fps, label=label, source="generated")
