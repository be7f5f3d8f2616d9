import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from animgan import augment, quat, toy
from animgan.augment import (
    AugmentError,
    ClusterSchedule,
    balance_dataset,
    cluster_sequences,
    crossover,
    halve,
    mean_embeddings,
    mirror,
    mutate,
    synth_hard_negative,
    write_augmented,
)
from animgan.codec import CodecConfig, train_autoencoder
from animgan.skeleton import CANONICAL_JOINTS, LEFT_RIGHT_PAIRS, MotionSequence, canonical_skeleton

SKEL = canonical_skeleton()
J = CANONICAL_JOINTS.index


def rand_seq(seed, n=6):
    rng = np.random.default_rng(seed)
    return MotionSequence(SKEL, quat.random(rng, (n, 21)), 5.0, rng.normal(size=(n, 3)))


def reflect(q):
    return q * np.array([1.0, 1.0, -1.0, -1.0])


# --- operators ------------------------------------------------------------------------


def test_mutate_zero_noise_is_identity():
    m = rand_seq(0)
    assert np.array_equal(mutate(m, 0.0, seed=1).rotations, m.rotations)


def test_mutate_noise_magnitude():
    m = MotionSequence(SKEL, np.tile(quat.IDENTITY, (50, 21, 1)), 5.0)
    out = mutate(m, 5.0, seed=2)
    # 1050 samples; |N(0, 5 deg)| has mean 5 * sqrt(2 / pi) ~ 4 deg
    mean_deg = np.rad2deg(quat.geodesic(out.rotations, m.rotations)).mean()
    assert 2.0 <= mean_deg <= 8.0


def test_mutate_rejects_negative_noise():
    with pytest.raises(AugmentError):
        mutate(rand_seq(0), -1.0)


def test_crossover_partition():
    a, b = rand_seq(1), rand_seq(2)
    c = crossover(a, b)
    assert np.array_equal(c.rotations[:, J("LeftUpLeg")], b.rotations[:, J("LeftUpLeg")])
    assert np.array_equal(c.rotations[:, :13], a.rotations[:, :13])
    assert np.array_equal(c.rotations[:, 13:], b.rotations[:, 13:])


def test_crossover_length_mismatch():
    with pytest.raises(AugmentError):
        crossover(rand_seq(1, 5), rand_seq(2, 6))


def test_halve_fixed_point_and_angles():
    ident = MotionSequence(SKEL, np.tile(quat.IDENTITY, (1, 21, 1)), 5.0)
    assert np.array_equal(halve(ident).rotations, ident.rotations)
    z90 = np.tile(quat.from_axis_angle([0, 0, 1], np.pi / 2), (1, 21, 1))
    m = MotionSequence(SKEL, z90, 5.0)
    want45 = quat.from_axis_angle([0, 0, 1], np.pi / 4)
    assert np.abs(halve(m).rotations - want45).max() < 1e-6
    want22 = quat.from_axis_angle([0, 0, 1], np.pi / 8)
    assert np.abs(halve(halve(m)).rotations - want22).max() < 1e-6


@given(st.integers(0, 10_000))
def test_halve_keeps_axis(seed):
    m = rand_seq(seed, 2)
    h = halve(m).rotations
    axis_in = m.rotations[..., 1:] / np.linalg.norm(m.rotations[..., 1:], axis=-1, keepdims=True)
    axis_out = h[..., 1:] / np.linalg.norm(h[..., 1:], axis=-1, keepdims=True)
    assert np.allclose(axis_in, axis_out, atol=1e-9)


def test_mirror_moves_left_wave_to_right():
    m = toy.make_toy_corpus(1, 1, 20, 3, family_set=[toy.FAMILIES[4]])[0]  # left_punch
    out = mirror(m)
    for name in ("Arm", "ForeArm", "Hand"):
        assert np.array_equal(out.rotations[:, J("Right" + name)], reflect(m.rotations[:, J("Left" + name)]))


def test_mirror_fixes_symmetric_pose():
    rng = np.random.default_rng(4)
    rot = np.empty((3, 21, 4))
    for j in range(21):
        # centre joints rotate about X only, which the reflection keeps
        rot[:, j] = quat.from_axis_angle(np.broadcast_to([1.0, 0, 0], (3, 3)), rng.normal(size=3))
    for l, r in LEFT_RIGHT_PAIRS:
        rot[:, l] = quat.random(rng, 3)
        rot[:, r] = reflect(rot[:, l])
    m = MotionSequence(SKEL, rot, 5.0)
    assert np.abs(mirror(m).rotations - m.rotations).max() < 1e-9


# --- hard negatives -------------------------------------------------------------------


def test_reversal_conjugates():
    m = rand_seq(5)
    r = synth_hard_negative(m, "reversal")
    assert np.array_equal(r.rotations, quat.conj(m.rotations)) and r.source == "hard_negative"
    assert np.allclose(quat.angle(r.rotations), quat.angle(m.rotations))


def test_bounce_indices():
    m = rand_seq(6, 10)
    b = synth_hard_negative(m, "bounce")
    assert b.n_frames == 10
    assert np.array_equal(b.rotations, m.rotations[[0, 1, 2, 3, 4, 4, 3, 2, 1, 0]])
    assert np.array_equal(b.rotations[5], m.rotations[4])


def test_big_noise_deterministic():
    m = rand_seq(7)
    a = synth_hard_negative(m, "big_noise", seed=11)
    assert np.array_equal(a.rotations, synth_hard_negative(m, "big_noise", seed=11).rotations)
    assert np.rad2deg(quat.geodesic(a.rotations, m.rotations)).mean() > 20


def test_unknown_kind():
    with pytest.raises(AugmentError):
        synth_hard_negative(rand_seq(0), "nope")


@pytest.mark.parametrize("kind", augment.HARD_NEGATIVE_KINDS)
def test_array_version_matches(kind):
    m = rand_seq(8)
    a = augment.hard_negative_rotations(m.rotations, kind, np.random.default_rng(3))
    b = synth_hard_negative(m, kind, seed=np.random.default_rng(3)).rotations
    assert np.allclose(a, b, atol=1e-15)


# --- clustering and balancing ---------------------------------------------------------------


@pytest.fixture(scope="module")
def families():
    a = toy.make_toy_corpus(1, 10, 20, 21, family_set=[toy.FAMILIES[0]])
    b = toy.make_toy_corpus(1, 10, 20, 22, family_set=[toy.FAMILIES[1]])
    codec, _ = train_autoencoder(np.concatenate([m.rotations for m in a + b]), CodecConfig(lr=3e-3, epochs=60, dropout=0.0))
    return a, b, codec


def test_one_cluster_is_the_mean(families):
    a, b, codec = families
    model = cluster_sequences(a + b, codec, 1)
    assert np.allclose(model.centroids[0], mean_embeddings(a + b, codec).mean(axis=0))
    assert set(model.assignment) == {0}


def test_two_families_split_cleanly(families):
    a, b, codec = families
    model = cluster_sequences(a + b, codec, 2, seed=0)
    first, second = model.assignment[:10], model.assignment[10:]
    assert len(set(first)) == 1 and len(set(second)) == 1 and first[0] != second[0]


def test_singletons_when_k_equals_size(families):
    a, _, codec = families
    model = cluster_sequences(a[:5], codec, 5)
    assert sorted(model.assignment) == [0, 1, 2, 3, 4]


def test_cluster_bounds(families):
    a, _, codec = families
    with pytest.raises(AugmentError):
        cluster_sequences(a[:3], codec, 4)


def test_schedule():
    s = ClusterSchedule(4, 2)
    assert [s.k_at(r) for r in range(3)] == [4, 6, 8]


def test_balanced_target_equal_to_size(families):
    a, b, codec = families
    res = balance_dataset(a + b, codec, 20)
    assert res.sequences == a + b and res.k_values == []


def test_balancing_grows_the_small_family(families):
    a, b, codec = families
    res = balance_dataset(a + b[:2], codec, 20, seed=0, schedule=ClusterSchedule(2, 0))
    assert len(res.sequences) == 20
    final = cluster_sequences(res.sequences, codec, 2, seed=0)
    assert final.sizes.min() / 20 >= 0.35
    assert all(e["op"] in augment.OPERATORS for e in res.manifest[12:])


def test_write_augmented_manifest(families, tmp_path):
    a, _, codec = families
    res = balance_dataset(a[:3], codec, 4, seed=1)
    write_augmented(res, str(tmp_path))
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert len(manifest["sequences"]) == 4 and (tmp_path / "seq_00003.bvh").exists()
    assert manifest["sequences"][3]["parents"]
