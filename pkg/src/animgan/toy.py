"""Procedural motion families for desk-scale experiments.

Every family drives a few joints with sinusoids about a fixed axis, each
family with its own joint subset, amplitude, bias angle and frequency.
Every sequence additionally carries a slow quarter turn of the whole body
about the vertical (a monotone trend, so time-reversed or bounced segments
are implausible) and small static per-joint offsets that differ between
sequences.
"""

from dataclasses import dataclass

import numpy as np

from . import quat
from .skeleton import CANONICAL_JOINTS, TARGET_FPS, MotionSequence, canonical_skeleton

__all__ = ["Family", "FAMILIES", "family_sequence", "make_toy_corpus"]


@dataclass(frozen=True)
class Family:
    name: str
    # (joint name, axis, sign) triples driven by the oscillator
    tracks: tuple
    amplitude_deg: float
    bias_deg: float
    freq_hz: float
    # phase offset between consecutive tracks (radians)
    track_phase: float = 0.0

    @property
    def joints(self):
        return tuple(CANONICAL_JOINTS.index(j) for j, _, _ in self.tracks)


_X, _Y, _Z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)

FAMILIES = (
    Family("arm_wave", (("LeftArm", _Z, 1.0), ("RightArm", _Z, -1.0)), 40.0, 35.0, 0.5),
    Family("leg_swing", (("LeftUpLeg", _X, -1.0), ("RightUpLeg", _X, -1.0)), 30.0, 15.0, 0.3, np.pi),
    Family("head_nod", (("Neck", _X, 1.0), ("Head", _X, 1.0)), 20.0, 10.0, 0.7),
    Family("torso_twist", (("Spine", _Y, 1.0), ("Spine1", _Y, 1.0)), 25.0, 5.0, 0.25),
    Family("left_punch", (("LeftArm", _Y, -1.0), ("LeftForeArm", _Y, -1.0)), 45.0, 45.0, 0.6, 0.5),
    Family("knee_bend", (("LeftLeg", _X, 1.0), ("RightLeg", _X, 1.0)), 30.0, 30.0, 0.4),
)

_TREND_JOINT = CANONICAL_JOINTS.index("Hips")
_TREND_AXIS = _Y
# a lean of the upper spine this small was invisible to the discriminator
_TREND_DEG = 90.0
_NUISANCE_DEG = 2.0


def family_sequence(family, n_frames, rng, fps=TARGET_FPS, nuisance_deg=_NUISANCE_DEG, trend_deg=_TREND_DEG):
    """One random instance of ``family``; returns (n_frames, 21, 4) rotations."""
    t = np.arange(n_frames) / fps
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = family.amplitude_deg * rng.uniform(0.85, 1.15)
    freq = family.freq_hz * rng.uniform(0.9, 1.1)
    rot = np.zeros((n_frames, len(CANONICAL_JOINTS), 4))
    rot[..., 0] = 1.0
    if nuisance_deg > 0:
        axes = rng.normal(size=(len(CANONICAL_JOINTS), 3))
        angles = np.deg2rad(rng.normal(0.0, nuisance_deg, size=len(CANONICAL_JOINTS)))
        rot[:] = quat.from_axis_angle(axes, angles)
    for k, (name, axis, sign) in enumerate(family.tracks):
        j = CANONICAL_JOINTS.index(name)
        ang = np.deg2rad(family.bias_deg + amp * np.sin(2 * np.pi * freq * t + phase + k * family.track_phase))
        drive = quat.from_axis_angle(np.broadcast_to(axis, (n_frames, 3)), sign * ang)
        rot[:, j] = quat.mul(drive, rot[:, j])
    if trend_deg:
        turn = np.deg2rad(np.linspace(0.0, trend_deg, n_frames))
        rot[:, _TREND_JOINT] = quat.mul(quat.from_axis_angle(np.broadcast_to(_TREND_AXIS, (n_frames, 3)), turn), rot[:, _TREND_JOINT])
    return quat.normalize(rot)


def make_toy_corpus(families=2, per_family=100, k=30, seed=0, fps=TARGET_FPS, family_set=None):
    """``families`` x ``per_family`` labelled sequences of ``k`` frames at ``fps``.

    Families are taken in order from ``family_set`` (default :data:`FAMILIES`),
    wrapping around if more are requested than defined.
    """
    if families < 1 or per_family < 1 or k < 1:
        raise ValueError("families, per_family and k must be >= 1")
    pool = tuple(family_set or FAMILIES)
    rng = np.random.default_rng(seed)
    skel = canonical_skeleton()
    out = []
    for f in range(families):
        fam = pool[f % len(pool)]
        label = fam.name if f < len(pool) else f"{fam.name}_{f // len(pool)}"
        for _ in range(per_family):
            out.append(MotionSequence(skel, family_sequence(fam, k, rng, fps), fps, label=label))
    return out
