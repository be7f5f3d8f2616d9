"""Sequence-level augmentation operators, hard negatives and cluster balancing."""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.cluster import KMeans

from . import quat
from .skeleton import LEFT_RIGHT_PAIRS, LOWER_BODY, SkeletonError, is_canonical

__all__ = [
    "AugmentError",
    "ClusterSchedule",
    "ClusterModel",
    "BalanceResult",
    "mutate",
    "crossover",
    "halve",
    "mirror",
    "synth_hard_negative",
    "HARD_NEGATIVE_KINDS",
    "OPERATORS",
    "mean_embeddings",
    "cluster_sequences",
    "balance_dataset",
    "write_augmented",
]

BIG_NOISE_DEG = 45.0
DEFAULT_MUTATE_DEG = 5.0
HARD_NEGATIVE_KINDS = ("reversal", "big_noise", "bounce")


class AugmentError(ValueError):
    pass


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _derived(motion, rotations, source, **extra):
    return motion.with_(rotations=rotations, source=source, **extra)


def mutate(motion, noise_scale=DEFAULT_MUTATE_DEG, seed=None, source="augmented"):
    """Left-multiply every joint rotation by a random axis-angle rotation.

    Axes are uniform on the sphere; angles are N(0, noise_scale^2) in degrees.
    """
    if noise_scale < 0:
        raise AugmentError("noise scale must be non-negative")
    if noise_scale == 0:
        return _derived(motion, motion.rotations, source)
    rng = _rng(seed)
    shape = motion.rotations.shape[:2]
    axes = rng.normal(size=shape + (3,))
    angles = np.deg2rad(rng.normal(0.0, noise_scale, size=shape))
    noise = quat.from_axis_angle(axes, angles)
    return _derived(motion, quat.normalize(quat.mul(noise, motion.rotations)), source)


def crossover(a, b):
    """Upper body (spine, head, arms) of ``a`` with the legs of ``b``, frame by frame."""
    if a.n_frames != b.n_frames:
        raise AugmentError(f"frame counts differ: {a.n_frames} vs {b.n_frames}")
    if not a.skeleton.same_hierarchy(b.skeleton):
        raise AugmentError("sequences use different skeletons")
    rot = np.array(a.rotations)
    legs = list(LOWER_BODY)
    rot[:, legs] = b.rotations[:, legs]
    return _derived(a, rot, "augmented")


def halve(motion):
    """Halve every joint's rotation angle about the same axis (midpoint with the identity)."""
    q = motion.rotations  # canonical, so w >= 0 and q + 1 never cancels
    mid = q + quat.IDENTITY
    return _derived(motion, quat.normalize(mid), "augmented")


def mirror(motion):
    """Reflect across the sagittal (YZ) plane: swap left/right tracks, negate y and z."""
    if not is_canonical(motion.skeleton):
        raise AugmentError("mirroring needs the canonical skeleton")
    rot = np.array(motion.rotations)
    for l, r in LEFT_RIGHT_PAIRS:
        rot[:, [l, r]] = rot[:, [r, l]]
    rot[..., 2:] = -rot[..., 2:]
    root = np.array(motion.root_translation)
    root[:, 0] = -root[:, 0]
    return _derived(motion, rot, "augmented", root_translation=root)


def _bounce_indices(n):
    half = math.ceil(n / 2)
    idx = np.arange(half)
    return np.concatenate([idx, idx[::-1]])[:n]


def synth_hard_negative(motion, kind, seed=None):
    """Implausible variant of ``motion`` for the discriminator."""
    if kind == "reversal":
        return _derived(motion, quat.conj(motion.rotations), "hard_negative")
    if kind == "big_noise":
        return mutate(motion, BIG_NOISE_DEG, seed, source="hard_negative")
    if kind == "bounce":
        if motion.n_frames < 2:
            raise AugmentError("bounce needs at least two frames")
        idx = _bounce_indices(motion.n_frames)
        return _derived(motion, motion.rotations[idx], "hard_negative", root_translation=motion.root_translation[idx])
    raise AugmentError(f"unknown hard-negative kind {kind!r}")


def hard_negative_rotations(rotations, kind, rng):
    """Array version of :func:`synth_hard_negative` on (F, J, 4) rotations (no validation)."""
    if kind == "reversal":
        return quat.conj(rotations)
    if kind == "big_noise":
        shape = rotations.shape[:2]
        axes = rng.normal(size=shape + (3,))
        angles = np.deg2rad(rng.normal(0.0, BIG_NOISE_DEG, size=shape))
        return quat.canonical(quat.normalize(quat.mul(quat.from_axis_angle(axes, angles), rotations)))
    if kind == "bounce":
        return rotations[_bounce_indices(len(rotations))]
    raise AugmentError(f"unknown hard-negative kind {kind!r}")


OPERATORS = ("mutate", "crossover", "halve", "mirror")


# ---------------------------------------------------------------------------
# clustering and balancing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClusterSchedule:
    start: int = 4
    increment: int = 2

    def k_at(self, round_index):
        return self.start + self.increment * round_index


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignment: np.ndarray
    schedule: ClusterSchedule = field(default_factory=ClusterSchedule)
    round: int = 0

    @property
    def sizes(self):
        return np.bincount(self.assignment, minlength=len(self.centroids))


def mean_embeddings(dataset, codec):
    """Per-sequence mean pose embedding, (N, 20)."""
    return np.stack([codec.encode(m.rotations).mean(axis=0) for m in dataset])


def cluster_sequences(dataset, codec, k, seed=0, embeddings=None):
    """k-means on mean pose embeddings (deterministic given seed)."""
    dataset = list(dataset)
    if not dataset:
        raise AugmentError("empty dataset")
    if k < 1 or k > len(dataset):
        raise AugmentError(f"cluster count {k} outside [1, {len(dataset)}]")
    emb = mean_embeddings(dataset, codec) if embeddings is None else embeddings
    if k == 1:
        return ClusterModel(emb.mean(axis=0, keepdims=True), np.zeros(len(dataset), dtype=int))
    km = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(emb)
    return ClusterModel(km.cluster_centers_, km.labels_.astype(int))


@dataclass
class BalanceResult:
    sequences: list
    manifest: list  # one dict per sequence: id, source op, parent ids, seed
    k_values: list


def _apply_op(op, members, dataset, rng, mutate_deg):
    pick = [dataset[int(i)] for i in rng.choice(members, size=2, replace=len(members) < 2)]
    if op == "mutate":
        return mutate(pick[0], mutate_deg, rng), [pick[0]]
    if op == "crossover":
        return crossover(pick[0], pick[1]), pick
    if op == "halve":
        return halve(pick[0]), [pick[0]]
    if op == "mirror":
        return mirror(pick[0]), [pick[0]]
    raise AugmentError(f"unknown operator {op!r}")


def balance_dataset(dataset, codec, target_size, seed=0, schedule=None, operators=OPERATORS, mutate_deg=DEFAULT_MUTATE_DEG):
    """Grow ``dataset`` to ``target_size`` by filling the smallest cluster each round.

    Round r clusters the current data with k = schedule.k_at(r) (capped at
    the dataset size), picks the smallest cluster (lowest index on ties) and
    adds one sequence made by a uniformly chosen operator applied to members
    of that cluster.  Originals are never removed.
    """
    schedule = schedule or ClusterSchedule()
    data = list(dataset)
    if not data:
        raise AugmentError("empty dataset")
    if target_size < len(data):
        raise AugmentError(f"target size {target_size} is below the current size {len(data)}")
    rng = np.random.default_rng(seed)
    manifest = [{"id": i, "op": "original", "parents": [], "seed": None} for i in range(len(data))]
    ids = {id(m): i for i, m in enumerate(data)}
    emb = mean_embeddings(data, codec) if len(data) < target_size else None
    k_values = []
    r = 0
    while len(data) < target_size:
        k = min(schedule.k_at(r), len(data))
        k_values.append(k)
        model = cluster_sequences(data, codec, k, seed=seed + r, embeddings=emb)
        sizes = model.sizes
        # k-means may leave a cluster empty when points coincide
        smallest = int(np.argmin(np.where(sizes > 0, sizes, np.iinfo(np.int64).max)))
        members = np.flatnonzero(model.assignment == smallest)
        op = operators[int(rng.integers(len(operators)))]
        try:
            new, parents = _apply_op(op, members, data, rng, mutate_deg)
        except (AugmentError, SkeletonError):
            new, parents = mutate(data[int(members[0])], mutate_deg, rng), [data[int(members[0])]]
            op = "mutate"
        ids[id(new)] = len(data)
        manifest.append({"id": len(data), "op": op, "parents": [ids[id(p)] for p in parents], "round": r, "k": k, "seed": seed})
        data.append(new)
        emb = np.vstack([emb, codec.encode(new.rotations).mean(axis=0)])
        r += 1
    return BalanceResult(data, manifest, k_values)


def write_augmented(result, out_dir, names=None):
    """BVH files plus ``manifest.json`` describing the operator and parents of each file."""
    from .bvh import write_bvh_file

    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for i, (m, meta) in enumerate(zip(result.sequences, result.manifest)):
        name = names[i] if names and i < len(names) else f"seq_{i:05d}.bvh"
        write_bvh_file(os.path.join(out_dir, name), m.skeleton, m)
        entries.append(dict(meta, file=name, label=m.label, source=m.source))
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump({"sequences": entries}, fh, indent=1)
