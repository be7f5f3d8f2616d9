"""Skeletons, motion sequences and the pure operations over them."""

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels, quat

__all__ = [
    "Skeleton",
    "MotionSequence",
    "SkeletonError",
    "CANONICAL_JOINTS",
    "canonical_skeleton",
    "forward_kinematics",
    "sequence_positions",
    "resample",
    "trim",
    "retarget_to_canonical",
    "normalize_motion",
    "TARGET_FPS",
    "MAX_FRAMES",
]

TARGET_FPS = 5.0
MAX_FRAMES = 300
SOURCES = ("real", "generated", "augmented", "hard_negative")
UNIT_TOL = 1e-6


class SkeletonError(ValueError):
    pass


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Joint hierarchy in topological order; offsets in centimetres.

    ``channels`` keeps each joint's BVH channel list so that a parsed file
    can be written back with its original layout.  ``end_sites`` maps a
    joint index to the offset of its End Site, if the file declared one.
    """

    names: tuple
    parents: tuple
    offsets: np.ndarray
    channels: tuple = ()
    end_sites: Mapping[int, tuple] = field(default_factory=dict)

    def __post_init__(self):
        names = tuple(self.names)
        parents = tuple(-1 if p is None else int(p) for p in self.parents)
        offsets = _frozen(self.offsets).reshape(-1, 3)
        if not names:
            raise SkeletonError("skeleton has no joints")
        if len(parents) != len(names) or len(offsets) != len(names):
            raise SkeletonError("names, parents and offsets disagree in length")
        if len(set(names)) != len(names):
            raise SkeletonError("duplicate joint names")
        if parents[0] != -1 or any(p == -1 for p in parents[1:]):
            raise SkeletonError("exactly one root, first in order, is required")
        for j, p in enumerate(parents[1:], start=1):
            if not 0 <= p < j:
                raise SkeletonError(f"joint {names[j]!r}: parent must precede it")
        channels = tuple(tuple(c) for c in self.channels)
        if channels and len(channels) != len(names):
            raise SkeletonError("channels list length differs from joint count")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "end_sites", {int(k): tuple(map(float, v)) for k, v in dict(self.end_sites).items()})

    @property
    def n_joints(self):
        return len(self.names)

    @property
    def parent_array(self):
        return np.asarray(self.parents, dtype=np.int64)

    def index(self, name):
        try:
            return self.names.index(name)
        except ValueError:
            raise SkeletonError(f"no joint named {name!r}") from None

    def children(self, j):
        return [c for c, p in enumerate(self.parents) if p == j]

    def same_hierarchy(self, other):
        return (
            self.names == other.names
            and self.parents == other.parents
            and np.array_equal(self.offsets, other.offsets)
        )

    def __eq__(self, other):
        if not isinstance(other, Skeleton):
            return NotImplemented
        return self.same_hierarchy(other) and self.channels == other.channels and self.end_sites == other.end_sites

    def __hash__(self):
        return hash((self.names, self.parents, self.offsets.tobytes()))


@dataclass(frozen=True, eq=False)
class MotionSequence:
    """Frames of local joint rotations, (F, J, 4) unit quaternions with w >= 0."""

    skeleton: Skeleton
    rotations: np.ndarray
    fps: float
    root_translation: Optional[np.ndarray] = None
    label: Optional[str] = None
    source: str = "real"

    def __post_init__(self):
        rot = np.array(self.rotations, dtype=np.float64)
        if rot.ndim != 3 or rot.shape[2] != 4:
            raise SkeletonError(f"rotations must be (frames, joints, 4), got {rot.shape}")
        if rot.shape[0] < 1:
            raise SkeletonError("a motion needs at least one frame")
        if rot.shape[1] != self.skeleton.n_joints:
            raise SkeletonError("rotation joint count does not match the skeleton")
        if not np.all(np.isfinite(rot)):
            raise SkeletonError("non-finite rotation")
        if np.max(np.abs(np.linalg.norm(rot, axis=-1) - 1.0)) > UNIT_TOL:
            rot = quat.normalize(rot)
        rot = quat.canonical(rot)
        if not self.fps > 0:
            raise SkeletonError("fps must be positive")
        if self.source not in SOURCES:
            raise SkeletonError(f"unknown source {self.source!r}")
        root = np.zeros((rot.shape[0], 3)) if self.root_translation is None else np.array(self.root_translation, dtype=np.float64)
        if root.shape != (rot.shape[0], 3):
            raise SkeletonError("root translation must be (frames, 3)")
        object.__setattr__(self, "rotations", _frozen(rot))
        object.__setattr__(self, "root_translation", _frozen(root))
        object.__setattr__(self, "fps", float(self.fps))

    @property
    def n_frames(self):
        return self.rotations.shape[0]

    @property
    def duration(self):
        return (self.n_frames - 1) / self.fps

    def with_(self, **changes):
        return replace(self, **changes)

    def __eq__(self, other):
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (
            self.skeleton == other.skeleton
            and np.array_equal(self.rotations, other.rotations)
            and np.array_equal(self.root_translation, other.root_translation)
            and self.fps == other.fps
            and self.label == other.label
            and self.source == other.source
        )


# ---------------------------------------------------------------------------
# canonical 21-joint rig
# ---------------------------------------------------------------------------

# (name, parent, offset in cm), roughly a 170 cm adult in a T-pose, +Y up,
# character facing +Z, left side on +X.
_CANONICAL = (
    ("Hips", None, (0.0, 0.0, 0.0)),
    ("Spine", "Hips", (0.0, 10.0, 0.0)),
    ("Spine1", "Spine", (0.0, 18.0, 0.0)),
    ("Neck", "Spine1", (0.0, 22.0, 0.0)),
    ("Head", "Neck", (0.0, 10.0, 0.0)),
    ("LeftShoulder", "Spine1", (4.0, 18.0, 0.0)),
    ("LeftArm", "LeftShoulder", (14.0, 0.0, 0.0)),
    ("LeftForeArm", "LeftArm", (28.0, 0.0, 0.0)),
    ("LeftHand", "LeftForeArm", (25.0, 0.0, 0.0)),
    ("RightShoulder", "Spine1", (-4.0, 18.0, 0.0)),
    ("RightArm", "RightShoulder", (-14.0, 0.0, 0.0)),
    ("RightForeArm", "RightArm", (-28.0, 0.0, 0.0)),
    ("RightHand", "RightForeArm", (-25.0, 0.0, 0.0)),
    ("LeftUpLeg", "Hips", (9.0, -6.0, 0.0)),
    ("LeftLeg", "LeftUpLeg", (0.0, -44.0, 0.0)),
    ("LeftFoot", "LeftLeg", (0.0, -42.0, 0.0)),
    ("LeftToeBase", "LeftFoot", (0.0, -6.0, 14.0)),
    ("RightUpLeg", "Hips", (-9.0, -6.0, 0.0)),
    ("RightLeg", "RightUpLeg", (0.0, -44.0, 0.0)),
    ("RightFoot", "RightLeg", (0.0, -42.0, 0.0)),
    ("RightToeBase", "RightFoot", (0.0, -6.0, 14.0)),
)

CANONICAL_JOINTS = tuple(n for n, _, _ in _CANONICAL)
N_JOINTS = len(CANONICAL_JOINTS)
ROOT_CHANNELS = ("Xposition", "Yposition", "Zposition", "Zrotation", "Xrotation", "Yrotation")
JOINT_CHANNELS = ("Zrotation", "Xrotation", "Yrotation")

UPPER_BODY = tuple(range(0, 13))
LOWER_BODY = tuple(range(13, 21))
LEFT_RIGHT_PAIRS = tuple(
    (CANONICAL_JOINTS.index(n), CANONICAL_JOINTS.index("Right" + n[4:]))
    for n in CANONICAL_JOINTS
    if n.startswith("Left")
)


def canonical_skeleton():
    names = CANONICAL_JOINTS
    parents = [None if p is None else names.index(p) for _, p, _ in _CANONICAL]
    offsets = [o for _, _, o in _CANONICAL]
    channels = [ROOT_CHANNELS] + [JOINT_CHANNELS] * (len(names) - 1)
    leaves = [j for j in range(len(names)) if j not in parents]
    end_sites = {j: (0.0, 0.0, 0.0) for j in leaves}
    for j in leaves:
        off = np.asarray(offsets[j])
        end_sites[j] = tuple(float(v) for v in 0.5 * off) if np.any(off) else (0.0, 8.0, 0.0)
    return Skeleton(names, parents, offsets, channels, end_sites)


_CANON = canonical_skeleton()


def is_canonical(skeleton):
    return skeleton.same_hierarchy(_CANON)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def forward_kinematics(skeleton, pose):
    """Hip-relative joint positions (J, 3) in cm for one pose (J, 4).

    The root translation is ignored; the root rotation still orients the body.
    """
    pose = np.asarray(pose, dtype=np.float64)
    _check_unit(pose)
    pos, _ = kernels.fk_forward(pose[None], skeleton.offsets, skeleton.parent_array)
    return pos[0]


def sequence_positions(motion_or_rotations, skeleton=None):
    """Hip-relative positions for every frame: (F, J, 3)."""
    if isinstance(motion_or_rotations, MotionSequence):
        skeleton = motion_or_rotations.skeleton
        rot = motion_or_rotations.rotations
    else:
        rot = np.asarray(motion_or_rotations, dtype=np.float64)
        skeleton = skeleton or _CANON
    _check_unit(rot)
    shape = rot.shape
    pos, _ = kernels.fk_forward(rot.reshape(-1, shape[-2], 4), skeleton.offsets, skeleton.parent_array)
    return pos.reshape(shape[:-1] + (3,))


def _check_unit(q):
    err = np.max(np.abs(np.linalg.norm(q, axis=-1) - 1.0)) if q.size else 0.0
    if not err <= UNIT_TOL:
        raise SkeletonError(f"non-unit quaternion (norm error {err:.3g})")


def resample(motion, target_fps):
    """Downsample to ``target_fps``.

    Integer ratios pick every n-th frame; other ratios interpolate rotations
    by slerp and root translation linearly at uniform target timestamps.
    """
    target_fps = float(target_fps)
    if not target_fps > 0:
        raise SkeletonError("target fps must be positive")
    if target_fps > motion.fps + 1e-9:
        raise SkeletonError(f"upsampling from {motion.fps} to {target_fps} fps is not supported")
    if target_fps == motion.fps:
        return motion
    ratio = motion.fps / target_fps
    n_out = int(np.floor(motion.duration * target_fps + 1e-9)) + 1
    if abs(ratio - round(ratio)) < 1e-9:
        idx = np.arange(n_out) * int(round(ratio))
        return motion.with_(
            rotations=motion.rotations[idx],
            root_translation=motion.root_translation[idx],
            fps=target_fps,
        )
    src = np.arange(n_out) * ratio
    lo = np.minimum(np.floor(src).astype(int), motion.n_frames - 1)
    hi = np.minimum(lo + 1, motion.n_frames - 1)
    t = src - lo
    rot = quat.slerp(motion.rotations[lo], motion.rotations[hi], np.broadcast_to(t[:, None], (n_out, motion.skeleton.n_joints)))
    root = (1 - t)[:, None] * motion.root_translation[lo] + t[:, None] * motion.root_translation[hi]
    return motion.with_(rotations=rot, root_translation=root, fps=target_fps)


def trim(motion, max_frames=MAX_FRAMES):
    if max_frames < 1:
        raise SkeletonError("max_frames must be >= 1")
    if motion.n_frames <= max_frames:
        return motion
    return motion.with_(
        rotations=motion.rotations[:max_frames],
        root_translation=motion.root_translation[:max_frames],
    )


def retarget_to_canonical(skeleton, motion, joint_map):
    """Move ``motion`` onto the canonical rig.

    ``joint_map`` maps source joint names to canonical names.  Source joints
    that are not mapped are dropped; when a dropped joint sits between two
    mapped joints its local rotation is folded into the mapped child so the
    chain keeps its orientation.  Offsets come from the canonical rig.
    """
    if not skeleton.same_hierarchy(motion.skeleton):
        raise SkeletonError("motion does not reference the given skeleton")
    target_of = {}
    for src, dst in dict(joint_map).items():
        if dst not in CANONICAL_JOINTS:
            raise SkeletonError(f"{dst!r} is not a canonical joint")
        if src not in skeleton.names:
            raise SkeletonError(f"source joint {src!r} not in skeleton")
        if dst in target_of:
            raise SkeletonError(f"duplicate target assignment for {dst!r}")
        target_of[dst] = skeleton.index(src)
    missing = [n for n in CANONICAL_JOINTS if n not in target_of]
    if missing:
        raise SkeletonError(f"incomplete mapping, missing: {', '.join(missing)}")

    canon = _CANON
    src_rot = motion.rotations
    out = np.empty((motion.n_frames, N_JOINTS, 4))
    for j, name in enumerate(canon.names):
        s = target_of[name]
        p = canon.parents[j]
        stop = -1 if p < 0 else target_of[canon.names[p]]
        chain = []
        cur = s
        while cur != stop:
            if cur < 0:
                raise SkeletonError(f"mapping breaks the hierarchy at {name!r}")
            chain.append(cur)
            cur = skeleton.parents[cur]
        q = src_rot[:, chain[-1]]
        for c in reversed(chain[:-1]):
            q = quat.mul(q, src_rot[:, c])
        out[:, j] = q
    return MotionSequence(
        canon,
        out,
        motion.fps,
        motion.root_translation,
        motion.label,
        motion.source,
    )


def normalize_motion(motion, fps=TARGET_FPS, max_frames=MAX_FRAMES):
    """Dataset normalisation: downsample (if faster than ``fps``) then trim."""
    if motion.fps > fps:
        motion = resample(motion, fps)
    return trim(motion, max_frames)


def stack_rotations(motions: Sequence[MotionSequence]):
    return np.stack([m.rotations for m in motions])
