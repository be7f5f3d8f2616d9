"""Conditional discriminator over the spatiotemporal joint graph."""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import ndl
from .codec import EMBED_DIM
from .ndl import ops
from .skeleton import canonical_skeleton

__all__ = ["StGraph", "build_st_graph", "temporal_pool_matrix", "DiscriminatorNet", "discriminate", "WIDTHS", "POOL_AFTER", "MIN_FRAMES"]

WIDTHS = (16, 16, 16, 32, 32, 32, 64, 64, 64)
POOL_AFTER = (2, 5)  # 0-based layer indices followed by stride-2 temporal pooling
MIN_FRAMES = 4
LOGIT_CLIP = 30.0
INPUT_SCALE = 0.01  # cm -> m, keeps first-layer activations O(1)


class DiscriminatorError(ValueError):
    pass


@dataclass(frozen=True)
class StGraph:
    n_frames: int
    n_joints: int
    intra_edges: tuple  # (node, node) pairs, node = t * n_joints + j
    inter_edges: tuple
    adjacency: sp.csr_matrix  # D^-1/2 (A + I) D^-1/2

    @property
    def n_nodes(self):
        return self.n_frames * self.n_joints

    @property
    def n_edges(self):
        return len(self.intra_edges) + len(self.inter_edges)


def build_st_graph(skeleton, k):
    """Skeleton edges inside each frame plus same-joint edges between neighbouring frames."""
    if k < 1:
        raise DiscriminatorError("frame count must be >= 1")
    J = skeleton.n_joints
    bones = [(int(p), j) for j, p in enumerate(skeleton.parent_array) if p >= 0]
    intra = tuple((t * J + p, t * J + j) for t in range(k) for p, j in bones)
    inter = tuple((t * J + j, (t + 1) * J + j) for t in range(k - 1) for j in range(J))
    n = k * J
    edges = np.array(intra + inter, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    a = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    d = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    norm = sp.diags(d) @ a @ sp.diags(d)
    norm = sp.csr_matrix(norm)
    # exact symmetry regardless of summation order
    norm = sp.csr_matrix((norm + norm.T) * 0.5)
    return StGraph(k, J, intra, inter, norm)


def temporal_pool_matrix(k):
    """(ceil(k/2), k) averaging of frame pairs; an odd last frame is kept alone."""
    kp = (k + 1) // 2
    rows = np.repeat(np.arange(kp), 2)[:k]
    vals = np.array([1.0 / np.sum(rows == r) for r in rows])
    return sp.csr_matrix((vals, (rows, np.arange(k))), shape=(kp, k))


class DiscriminatorNet(ndl.Module):
    """9 residual graph-conv layers, temporal pooling after layers 3 and 6,
    global mean pooling, condition fusion and two dense layers.

    With ``rng=None`` all weights are zero and the output is exactly 0.5.
    """

    def __init__(self, skeleton=None, rng=None, dropout=0.5, widths=WIDTHS, head=32):
        self.skeleton = skeleton or canonical_skeleton()
        self.dropout = dropout
        self.widths = tuple(widths)
        self.convs = []
        self.projections = []
        c_in = 3
        for w in self.widths:
            self.convs.append(ndl.GraphConv(c_in, w, rng))
            if w != c_in:
                proj = ndl.glorot(rng, c_in, w) if rng is not None else np.zeros((c_in, w))
                self.projections.append(ndl.Param(proj))
            else:
                self.projections.append(None)
            c_in = w
        self.fuse = ndl.Dense(c_in + EMBED_DIM, head, rng)
        self.head = ndl.Dense(head, 1, rng)
        self._graphs = {}

    def graph(self, k):
        if k not in self._graphs:
            self._graphs[k] = build_st_graph(self.skeleton, k)
        return self._graphs[k]

    def logits(self, positions, condition, rng=None, training=False):
        """positions (B, k, J, 3), condition (B, k_c, 20) -> logits (B,)."""
        x = ndl.as_tensor(positions)
        c = ndl.as_tensor(condition)
        if x.ndim != 4 or x.shape[-1] != 3 or x.shape[2] != self.skeleton.n_joints:
            raise DiscriminatorError(f"positions must be (B, k, {self.skeleton.n_joints}, 3), got {x.shape}")
        if c.ndim != 3 or c.shape[-1] != EMBED_DIM or c.shape[0] != x.shape[0]:
            raise DiscriminatorError(f"condition must be (B, k, {EMBED_DIM}), got {c.shape}")
        B, k, J, _ = x.shape
        if k < MIN_FRAMES:
            raise DiscriminatorError(f"need at least {MIN_FRAMES} frames for two poolings, got {k}")
        h = ops.reshape(x * INPUT_SCALE, (B, k * J, 3))
        for layer, (conv, proj) in enumerate(zip(self.convs, self.projections)):
            out = ops.leaky_relu(conv(h, self.graph(k).adjacency))
            res = h if proj is None else ops.matmul(h, proj)
            h = ops.dropout(out + res, self.dropout, rng, training)
            if layer in POOL_AFTER:
                width = h.shape[-1]
                h = ops.spmm(temporal_pool_matrix(k), ops.reshape(h, (B, k, J * width)))
                k = h.shape[1]
                h = ops.reshape(h, (B, k * J, width))
        pooled = ops.mean(h, axis=1)
        cond = ops.mean(c, axis=1)
        z = ops.leaky_relu(self.fuse(ops.concat([pooled, cond], axis=-1)))
        return ops.reshape(self.head(z), (B,))

    def __call__(self, positions, condition, rng=None, training=False):
        # clipped so the score stays strictly inside (0, 1) in floating point
        return ops.sigmoid(ops.clip(self.logits(positions, condition, rng, training), -LOGIT_CLIP, LOGIT_CLIP))


def discriminate(net, positions, condition, training=False, rng=None):
    """Realness score in (0, 1) for one sequence (k, J, 3) or a batch (B, k, J, 3)."""
    pos = np.asarray(positions, dtype=np.float64)
    cond = np.asarray(condition, dtype=np.float64)
    single = pos.ndim == 3
    if single:
        pos, cond = pos[None], cond[None]
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(cond))):
        raise DiscriminatorError("non-finite input")
    out = net(pos, cond, rng, training).data
    return float(out[0]) if single else out
