import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.spatial.transform import Rotation

from animgan import bvh, quat
from animgan.bvh import BVHSyntaxError, FrameCountMismatch, UnsupportedChannels
from animgan.skeleton import (
    CANONICAL_JOINTS,
    MotionSequence,
    Skeleton,
    SkeletonError,
    canonical_skeleton,
    forward_kinematics,
    resample,
    retarget_to_canonical,
    sequence_positions,
    trim,
)

TWO_JOINT = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Chest
  {
    OFFSET 0 10 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0 5 0
    }
  }
}
MOTION
Frames: {n}
Frame Time: 0.033333
{rows}
"""


def doc(rows, n=None):
    return TWO_JOINT.replace("{n}", str(len(rows) if n is None else n)).replace("{rows}", "\n".join(rows))


# --- quaternion helpers against scipy -------------------------------------------------

unit = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda v: np.linalg.norm(v) > 0.1)


def to_scipy(q):
    q = quat.normalize(q)
    return Rotation.from_quat(np.r_[q[1:], q[:1]])


@given(unit, unit)
def test_quat_mul_matches_rotation_composition(a, b):
    got = quat.to_matrix(quat.normalize(quat.mul(quat.normalize(a), quat.normalize(b))))
    want = (to_scipy(a) * to_scipy(b)).as_matrix()
    assert np.allclose(got, want, atol=1e-12)


@given(unit)
def test_normalize_is_canonical_unit(q):
    n = quat.normalize(q)
    assert n[0] >= 0 and abs(np.linalg.norm(n) - 1) < 1e-12


@given(st.lists(st.floats(-179, 179), min_size=3, max_size=3), st.sampled_from(["ZXY", "XYZ", "YZX", "ZYX"]))
def test_euler_round_trip(angles, order):
    q = quat.from_euler(order, angles)
    back = quat.from_euler(order, quat.to_euler(order, q))
    assert quat.geodesic(q, back) < 1e-7


def test_zero_rotation_gives_degenerate_identity():
    assert np.array_equal(quat.normalize(np.zeros(4)), quat.IDENTITY)


def test_slerp_endpoints_and_midpoint():
    a = quat.from_axis_angle([0, 0, 1], 0.0)
    b = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    assert np.allclose(quat.slerp(a, b, 0.0), a)
    assert np.allclose(quat.slerp(a, b, 1.0), b)
    assert np.isclose(quat.angle(quat.slerp(a, b, 0.5)), np.pi / 4)


# --- parsing -------------------------------------------------------------------------


def test_minimal_document_all_zero_is_identity():
    _, m = bvh.parse_bvh(doc(["0 0 0 0 0 0 0 0 0"]))
    assert np.array_equal(m.rotations, np.tile(quat.IDENTITY, (1, 2, 1)))


def test_z_rotation_90():
    _, m = bvh.parse_bvh(doc(["0 0 0 0 0 0 90 0 0"]))
    assert np.allclose(m.rotations[0, 1], [np.sqrt(0.5), 0, 0, np.sqrt(0.5)], atol=1e-4)


def test_frame_count_mismatch():
    with pytest.raises(FrameCountMismatch):
        bvh.parse_bvh(doc(["0 0 0 0 0 0 0 0 0"] * 9, n=10))


def test_syntax_error_carries_line_number():
    text = doc(["0 0 0 0 0 0 0 0 0"]).replace("OFFSET 0 10 0", "OFFSET 0 ten 0")
    with pytest.raises(BVHSyntaxError) as exc:
        bvh.parse_bvh(text)
    assert exc.value.lineno == text.splitlines().index("    OFFSET 0 ten 0") + 1


def test_unsupported_channels():
    text = doc(["0 0 0 0 0 0 0 0"]).replace("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 2 Zrotation Xrotation")
    with pytest.raises(UnsupportedChannels):
        bvh.parse_bvh(text)


def test_fps_from_rounded_frame_time():
    _, m = bvh.parse_bvh(doc(["0 0 0 0 0 0 0 0 0"]))
    assert m.fps == 30.0


# --- writing -------------------------------------------------------------------------


def test_minimal_round_trip():
    s1, m1 = bvh.parse_bvh(doc(["1 2 3 10 20 30 40 50 60", "0 0 0 -5 5 -5 1 2 3"]))
    s2, m2 = bvh.parse_bvh(bvh.write_bvh(s1, m1))
    assert s1.names == s2.names and s1.parents == s2.parents and np.array_equal(s1.offsets, s2.offsets)
    assert np.abs(m1.rotations - m2.rotations).max() < 1e-5
    assert np.allclose(m1.root_translation, m2.root_translation)


def test_canonical_300_frames_at_5fps_frame_time():
    skel = canonical_skeleton()
    m = MotionSequence(skel, np.tile(quat.IDENTITY, (300, 21, 1)), 5.0)
    text = bvh.write_bvh(skel, m)
    assert "Frame Time: 0.200000" in text and "Frames: 300" in text


def test_write_is_idempotent(rng):
    skel = canonical_skeleton()
    m = MotionSequence(skel, quat.random(rng, (4, 21)), 5.0, rng.normal(size=(4, 3)))
    first = bvh.write_bvh(skel, m)
    second = bvh.write_bvh(*bvh.parse_bvh(first))
    third = bvh.write_bvh(*bvh.parse_bvh(second))
    assert second == third


def test_file_helpers(tmp_path, rng):
    skel = canonical_skeleton()
    m = MotionSequence(skel, quat.random(rng, (3, 21)), 5.0)
    path = tmp_path / "a.bvh"
    bvh.write_bvh_file(str(path), skel, m)
    s, m2 = bvh.read_bvh_file(str(path))
    assert s.same_hierarchy(skel) and m2.n_frames == 3


# --- resampling and trimming ------------------------------------------------------------


def seq(n, fps=30.0, rng=None):
    rng = rng or np.random.default_rng(0)
    return MotionSequence(canonical_skeleton(), quat.random(rng, (n, 21)), fps, rng.normal(size=(n, 3)))


def test_resample_30_to_5():
    m = seq(60)
    r = resample(m, 5.0)
    assert r.n_frames == 10 and r.fps == 5.0
    assert np.array_equal(r.rotations, m.rotations[::6])


def test_resample_identity():
    m = seq(7)
    assert resample(m, 30.0) is m


def test_resample_constant_midpoint():
    rot = np.tile(quat.from_axis_angle([1, 1, 0], 0.7), (3, 21, 1))
    m = MotionSequence(canonical_skeleton(), rot, 2.0)
    r = resample(m, 1.5)  # non-integer ratio forces interpolation
    assert np.allclose(r.rotations, rot[0], atol=1e-12)


def test_resample_rejects_upsampling():
    with pytest.raises(SkeletonError):
        resample(seq(5, 5.0), 30.0)


@pytest.mark.parametrize("n,limit,want", [(450, 300, 300), (100, 300, 100), (1, 1, 1)])
def test_trim(n, limit, want):
    m = seq(n)
    t = trim(m, limit)
    assert t.n_frames == want and np.array_equal(t.rotations, m.rotations[:want])


# --- forward kinematics -----------------------------------------------------------------


def test_identity_pose_positions_are_cumulative_offsets():
    skel = canonical_skeleton()
    pos = forward_kinematics(skel, np.tile(quat.IDENTITY, (21, 1)))
    want = np.zeros((21, 3))
    for j in range(1, 21):
        want[j] = want[skel.parents[j]] + skel.offsets[j]
    assert np.allclose(pos, want, atol=1e-12)


def test_two_joint_root_90_about_z():
    skel = Skeleton(["a", "b"], [None, 0], [[0, 0, 0], [0, 1, 0]])
    q = np.array([quat.from_axis_angle([0, 0, 1], np.pi / 2), quat.IDENTITY])
    assert np.allclose(forward_kinematics(skel, q)[1], [-1, 0, 0], atol=1e-6)


def test_three_joint_stacked_rotations():
    skel = Skeleton(["a", "b", "c"], [None, 0, 1], [[0, 0, 0], [0, 1, 0], [0, 1, 0]])
    rz = quat.from_axis_angle([0, 0, 1], np.pi / 2)
    q = np.array([rz, rz, quat.IDENTITY])
    R = Rotation.from_euler("z", 90, degrees=True).as_matrix()
    tip = R @ [0, 1, 0] + R @ R @ [0, 1, 0]
    assert np.allclose(forward_kinematics(skel, q)[2], tip, atol=1e-9)


def test_fk_rejects_non_unit():
    with pytest.raises(SkeletonError):
        forward_kinematics(canonical_skeleton(), np.full((21, 4), 0.9))


@given(st.integers(0, 2 ** 31))
def test_fk_preserves_bone_lengths(seed):
    rng = np.random.default_rng(seed)
    skel = canonical_skeleton()
    pos = sequence_positions(quat.random(rng, (2, 21)), skel)
    for j in range(1, 21):
        bone = np.linalg.norm(pos[:, j] - pos[:, skel.parents[j]], axis=-1)
        assert np.allclose(bone, np.linalg.norm(skel.offsets[j]), atol=1e-9)


# --- retargeting ------------------------------------------------------------------------


def test_identity_retarget():
    m = seq(4)
    out = retarget_to_canonical(m.skeleton, m, {n: n for n in CANONICAL_JOINTS})
    assert np.array_equal(out.rotations, m.rotations)


def finger_rig():
    canon = canonical_skeleton()
    names = list(canon.names)
    parents = list(canon.parents)
    offsets = list(canon.offsets)
    for side in ("Left", "Right"):
        hand = names.index(side + "Hand")
        for f in ("Thumb", "Index"):
            names.append(side + f)
            parents.append(hand)
            offsets.append((1.0, 0.0, 0.0))
    return Skeleton(names, parents, offsets)


def test_finger_joints_are_dropped(rng):
    skel = finger_rig()
    assert skel.n_joints == 25
    m = MotionSequence(skel, quat.random(rng, (3, 25)), 30.0)
    out = retarget_to_canonical(skel, m, {n: n for n in CANONICAL_JOINTS})
    assert out.rotations.shape == (3, 21, 4)
    assert np.array_equal(out.rotations, m.rotations[:, :21])


def test_missing_head_is_an_error():
    m = seq(2)
    mapping = {n: n for n in CANONICAL_JOINTS if n != "Head"}
    with pytest.raises(SkeletonError, match="Head"):
        retarget_to_canonical(m.skeleton, m, mapping)


def test_intermediate_joint_is_folded(rng):
    # Spine -> Extra -> Spine1: the global orientation of Spine1 must survive
    canon = canonical_skeleton()
    names = list(canon.names)
    parents = list(canon.parents)
    offsets = [tuple(o) for o in canon.offsets]
    at = names.index("Spine1")
    names.insert(at, "Extra")
    parents = [p if p < at else p + 1 for p in parents]
    parents.insert(at, at - 1)
    parents[at + 1] = at
    offsets.insert(at, (0.0, 1.0, 0.0))
    skel = Skeleton(names, [None if p < 0 else p for p in parents], offsets)
    m = MotionSequence(skel, quat.random(rng, (2, 22)), 30.0)
    out = retarget_to_canonical(skel, m, {n: n for n in CANONICAL_JOINTS})
    def glob(rot, sk, j):
        q = rot[:, j]
        while sk.parents[j] >= 0:
            j = sk.parents[j]
            q = quat.mul(rot[:, j], q)
        return quat.canonical(q)
    assert np.allclose(glob(out.rotations, canon, canon.index("Spine1")), glob(m.rotations, skel, skel.index("Spine1")), atol=1e-12)


# --- sequence model ---------------------------------------------------------------------


def test_motion_canonicalises_sign():
    rot = -np.tile(quat.IDENTITY, (1, 21, 1))
    m = MotionSequence(canonical_skeleton(), rot, 5.0)
    assert np.all(m.rotations[..., 0] == 1.0)


@pytest.mark.parametrize("kwargs", [{"fps": 0.0}, {"source": "nope"}, {"rotations": np.zeros((0, 21, 4))}])
def test_motion_validation(kwargs):
    base = {"skeleton": canonical_skeleton(), "rotations": np.tile(quat.IDENTITY, (1, 21, 1)), "fps": 5.0}
    base.update(kwargs)
    with pytest.raises(SkeletonError):
        MotionSequence(**base)


def test_skeleton_validation():
    with pytest.raises(SkeletonError):
        Skeleton(["a", "a"], [None, 0], np.zeros((2, 3)))
    with pytest.raises(SkeletonError):
        Skeleton(["a", "b"], [None, None], np.zeros((2, 3)))
