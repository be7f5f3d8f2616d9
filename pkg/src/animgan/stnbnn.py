"""Main-joint detection with stage-wise nearest-neighbour descriptors.

A sequence is cut into T contiguous near-equal stages; each (stage, joint)
pair gets a descriptor made of that joint's hip-relative positions over the
stage.  For a query, the squared distance of each descriptor to its nearest
neighbour in a class's store gives a T x 21 matrix per class.  A bilinear
score u^T M v per class is fit with a one-vs-rest logistic model, alternating
between the spatial weights v and the temporal weights u.

Joint indices are 0-based throughout.
"""

import hashlib

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, softmax

from . import kernels
from .skeleton import MotionSequence, sequence_positions

__all__ = [
    "StnbnnError",
    "StnbnnModel",
    "stage_bounds",
    "extract_stage_descriptors",
    "train_stnbnn",
    "main_joints",
    "motion_energy_joints",
    "select_main_joints",
    "DEFAULT_T",
    "DEFAULT_J",
]

DEFAULT_T = 10
DEFAULT_J = 8
ROUNDS = 5
REG = 1e-2
SCORE_SCALE = 2.0
LOG_FEATURES = True
FORMAT_VERSION = 1


class StnbnnError(ValueError):
    pass


def _positions(motion):
    if isinstance(motion, MotionSequence):
        return sequence_positions(motion)
    pos = np.asarray(motion, dtype=np.float64)
    if pos.ndim != 3 or pos.shape[-1] != 3:
        raise StnbnnError(f"expected a motion or (F, J, 3) positions, got shape {pos.shape}")
    return pos


def stage_bounds(n_frames, T):
    """Start/stop frame of each of T contiguous near-equal stages."""
    if T < 1:
        raise StnbnnError("stage count must be >= 1")
    if n_frames < T:
        raise StnbnnError(f"{n_frames} frames cannot be split into {T} stages")
    edges = np.linspace(0, n_frames, T + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def extract_stage_descriptors(motion, T=DEFAULT_T, stage_frames=None):
    """Descriptors of shape (T, J, 3 * stage_frames).

    Each stage's frames are linearly resampled to ``stage_frames`` samples
    (default: the longest stage) so sequences of different lengths give
    comparable descriptors.  When every stage already has that many frames
    the positions are used unchanged.
    """
    pos = _positions(motion)
    bounds = stage_bounds(len(pos), T)
    L = stage_frames or max(b - a for a, b in bounds)
    out = np.empty((T, pos.shape[1], 3 * L))
    for t, (a, b) in enumerate(bounds):
        seg = pos[a:b]
        if len(seg) != L:
            src = np.linspace(0.0, len(seg) - 1.0, L)
            lo = np.floor(src).astype(int)
            hi = np.minimum(lo + 1, len(seg) - 1)
            w = (src - lo)[:, None, None]
            seg = (1.0 - w) * seg[lo] + w * seg[hi]
        out[t] = seg.transpose(1, 0, 2).reshape(pos.shape[1], 3 * L)
    return out


def _nn_matrix(query, store):
    """(T, J) nearest-neighbour squared distances of one descriptor set (T, J, D) to a store (n, T, J, D)."""
    T, J, D = query.shape
    # one (1 x n) search per (stage, joint) cell, batched through the kernel layout
    q = query.reshape(T * J, 1, D)
    s = store.transpose(1, 2, 0, 3).reshape(T * J, -1, D)
    return kernels.nn_min_sqdist_cells(q, s).reshape(T, J)


class StnbnnModel:
    """Per-class descriptor stores and bilinear weights.

    ``weights`` maps a class label to ``(u, v, scale, bias)``.  A model built
    directly from a single spatial weight vector (``from_weights``) skips the
    nearest-class step in :func:`main_joints`.
    """

    def __init__(self, T, J, stage_frames, labels, stores, weights, feature_scale=1.0):
        if not 1 <= J <= 21:
            raise StnbnnError("main-joint count must lie in [1, 21]")
        self.T = int(T)
        self.J = int(J)
        self.stage_frames = int(stage_frames)
        self.labels = list(labels)
        self.stores = {c: np.asarray(s, dtype=np.float64) for c, s in stores.items()}
        self.weights = {c: tuple(np.asarray(w, dtype=np.float64) if np.ndim(w) else float(w) for w in ws) for c, ws in weights.items()}
        self.feature_scale = float(feature_scale)
        for c, (u, v, _, _) in self.weights.items():
            if u.shape != (self.T,) or v.ndim != 1:
                raise StnbnnError(f"bad weight shapes for class {c!r}")
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v)) and u.min() >= 0 and v.min() >= 0):
                raise StnbnnError("weights must be finite and non-negative")

    @classmethod
    def from_weights(cls, v, J, u=None, T=DEFAULT_T):
        v = np.asarray(v, dtype=np.float64)
        u = np.full(T, 1.0 / T) if u is None else np.asarray(u, dtype=np.float64)
        return cls(len(u), J, 1, ["_"], {}, {"_": (u, v, 1.0, 0.0)})

    def spatial_weights(self, label=None):
        if label is None:
            if len(self.weights) != 1:
                raise StnbnnError("model has several classes; name one")
            label = next(iter(self.weights))
        return self.weights[label][1]

    def temporal_weights(self, label=None):
        if label is None:
            label = next(iter(self.weights))
        return self.weights[label][0]

    def descriptors(self, motion):
        return extract_stage_descriptors(motion, self.T, self.stage_frames)

    def distance_matrices(self, motion):
        """{label: (T, J) nearest-neighbour distances to that class's store}."""
        d = self.descriptors(motion)
        return {c: _nn_matrix(d, self.stores[c]) for c in self.labels}

    def nearest_class(self, motion):
        """Plain naive-Bayes nearest-neighbour decision (unweighted sum of distances)."""
        mats = self.distance_matrices(motion)
        return min(self.labels, key=lambda c: (mats[c].sum(), self.labels.index(c)))

    def store_digest(self):
        h = hashlib.sha256()
        for c in self.labels:
            h.update(str(c).encode())
            h.update(np.ascontiguousarray(self.stores[c]).tobytes())
        return h.hexdigest()

    def to_arrays(self):
        """Flat (meta, arrays) pair for checkpoint storage."""
        meta = {
            "version": FORMAT_VERSION,
            "T": self.T,
            "J": self.J,
            "stage_frames": self.stage_frames,
            "labels": self.labels,
            "feature_scale": self.feature_scale,
            "scalars": {str(i): [self.weights[c][2], self.weights[c][3]] for i, c in enumerate(self.weights)},
            "weight_labels": list(self.weights),
            "digest": self.store_digest(),
        }
        arrays = {}
        for i, c in enumerate(self.labels):
            arrays[f"store{i}"] = self.stores[c]
        for i, c in enumerate(self.weights):
            arrays[f"u{i}"] = self.weights[c][0]
            arrays[f"v{i}"] = self.weights[c][1]
        return meta, arrays

    @classmethod
    def from_arrays(cls, meta, arrays):
        if meta.get("version") != FORMAT_VERSION:
            raise StnbnnError("unsupported selector record version")
        stores = {c: arrays[f"store{i}"] for i, c in enumerate(meta["labels"])}
        weights = {
            c: (arrays[f"u{i}"], arrays[f"v{i}"], *meta["scalars"][str(i)]) for i, c in enumerate(meta["weight_labels"])
        }
        model = cls(meta["T"], meta["J"], meta["stage_frames"], meta["labels"], stores, weights, meta["feature_scale"])
        if stores and model.store_digest() != meta["digest"]:
            raise StnbnnError("descriptor store digest mismatch")
        return model


def _fit_factor(G, y, sw, theta0):
    """Logistic fit of SCORE_SCALE * (G @ softmax(beta)) + b; theta = (beta, b).

    The score scale is held fixed: with a free scale, any separable joint lets
    the fit win by growing the scale alone, and the weights never move.
    """
    n_w = G.shape[1]

    def objective(theta):
        beta, b = theta[:n_w], theta[n_w]
        w = softmax(beta)
        gw = G @ w
        s = SCORE_SCALE * gw + b
        loss = np.sum(sw * (np.logaddexp(0.0, s) - y * s)) + REG * beta @ beta
        r = sw * (expit(s) - y)
        dw = SCORE_SCALE * (G.T @ r)
        dbeta = w * (dw - w @ dw) + 2.0 * REG * beta
        return loss, np.concatenate([dbeta, [r.sum()]])

    res = minimize(objective, theta0, jac=True, method="L-BFGS-B")
    return res.x


def _transform(d):
    return np.log1p(d) if LOG_FEATURES else d


def _fit_bilinear(F, y, T, J):
    """Alternating fit of per-class (u, v, bias) on features F (N, T, J)."""
    pos = y.sum()
    sw = np.where(y > 0, 0.5 / pos, 0.5 / (len(y) - pos))
    alpha = np.zeros(T)
    beta = np.zeros(J)
    b = 0.0
    for _ in range(ROUNDS):
        u = softmax(alpha)
        th = _fit_factor(np.einsum("t,ntj->nj", u, F), y, sw, np.concatenate([beta, [b]]))
        beta, b = th[:J], th[J]
        v = softmax(beta)
        th = _fit_factor(np.einsum("j,ntj->nt", v, F), y, sw, np.concatenate([alpha, [b]]))
        alpha, b = th[:T], th[T]
    # softmax already gives non-negative unit-sum weights; renormalise against rounding
    u = softmax(alpha)
    v = softmax(beta)
    return u / u.sum(), v / v.sum(), SCORE_SCALE, float(b)


def train_stnbnn(sequences, labels=None, T=DEFAULT_T, J=DEFAULT_J):
    """Fit the selector on labelled sequences (MotionSequence with ``label`` or explicit ``labels``)."""
    sequences = list(sequences)
    if labels is None:
        labels = [getattr(s, "label", None) for s in sequences]
    if any(l is None for l in labels):
        raise StnbnnError("every training sequence needs a class label")
    classes = sorted(set(labels), key=lambda c: labels.index(c))
    if len(classes) < 2:
        raise StnbnnError("need at least two classes")
    counts = {c: labels.count(c) for c in classes}
    if min(counts.values()) < 2:
        raise StnbnnError(f"need at least two sequences per class, got {counts}")
    pos = [_positions(s) for s in sequences]
    L = max(max(b - a for a, b in stage_bounds(len(p), T)) for p in pos)
    desc = np.stack([extract_stage_descriptors(p, T, L) for p in pos])  # (N, T, J, D)
    lab = np.array([classes.index(l) for l in labels])
    N, _, nj, _ = desc.shape

    # pairwise (N, N, T, J) squared distances; the self-distance is masked out
    dist = np.empty((N, N, T, nj))
    for i in range(N):
        diff = desc - desc[i]
        dist[i] = np.einsum("ntjd,ntjd->ntj", diff, diff)
    dist[np.arange(N), np.arange(N)] = np.inf

    # M[c][n] = NN distance of n to class c's store (leave-one-out)
    M = np.stack([dist[:, lab == k].min(axis=1) for k in range(len(classes))])  # (C, N, T, J)
    scale = float(np.mean(M[np.isfinite(M)])) or 1.0
    weights = {}
    for k, c in enumerate(classes):
        # distance to the stores of every other class
        rest = _transform(np.delete(M, k, axis=0).min(axis=0) / scale)
        y = (lab == k).astype(np.float64)
        weights[c] = _fit_bilinear(rest, y, T, nj)
    stores = {c: desc[lab == k] for k, c in enumerate(classes)}
    return StnbnnModel(T, J, L, classes, stores, weights, scale)


def _top_j(v, J):
    v = np.asarray(v, dtype=np.float64)
    # stable sort on -v keeps the lower index first among ties
    order = np.argsort(-v, kind="stable")
    return tuple(sorted(int(j) for j in order[:J]))


def main_joints(model, motion=None, J=None):
    """The J joints with the largest spatial weights of the query's nearest class.

    Ties are broken by lower joint index.  Returns a sorted tuple.
    """
    if model is None or not model.weights:
        raise StnbnnError("selector has not been trained")
    J = model.J if J is None else J
    if len(model.weights) == 1 or not model.stores:
        v = next(iter(model.weights.values()))[1]
    else:
        if motion is None:
            raise StnbnnError("a query motion is needed to pick the nearest class")
        v = model.weights[model.nearest_class(motion)][1]
    return _top_j(v, J)


def motion_energy_joints(motion, J=DEFAULT_J):
    """Fallback selector: rank joints by summed squared frame-to-frame displacement."""
    pos = _positions(motion)
    energy = np.sum(np.diff(pos, axis=0) ** 2, axis=(0, 2)) if len(pos) > 1 else np.zeros(pos.shape[1])
    return _top_j(energy, J)


def select_main_joints(motion, model=None, J=DEFAULT_J):
    """ST-NBNN selection when a model is given, motion energy otherwise."""
    if model is None:
        return motion_energy_joints(motion, J)
    return main_joints(model, motion, J)
