import numpy as np
import pytest

from animgan import ndl, quat
from animgan.discriminator import (
    MIN_FRAMES,
    DiscriminatorError,
    DiscriminatorNet,
    build_st_graph,
    discriminate,
    temporal_pool_matrix,
)
from animgan.generator import GeneratorError, GeneratorNet, NoiseSpec, generate, generate_rotations, sample_noise
from animgan.losses import LossConfig, batch_st_loss, generator_loss, smoothness
from animgan.ndl import ops
from animgan.skeleton import Skeleton, canonical_skeleton, sequence_positions

SKEL = canonical_skeleton()


# --- generator --------------------------------------------------------------------------


def test_zero_generator_outputs_identity():
    rot = generate_rotations(GeneratorNet(), np.ones((5, 20)))
    assert np.array_equal(rot, np.tile(quat.IDENTITY, (5, 21, 1)))


def test_generator_determinism_and_diversity():
    net = GeneratorNet(hidden=16, rng=np.random.default_rng(0))
    cond = np.random.default_rng(1).normal(size=(6, 20))
    a = generate_rotations(net, cond, seed=3)
    assert np.array_equal(a, generate_rotations(net, cond, seed=3))
    assert np.abs(a - generate_rotations(net, cond, seed=4)).max() > 0


def test_generator_one_frame_per_condition_frame():
    net = GeneratorNet(hidden=8, rng=np.random.default_rng(0))
    m = generate(net, np.zeros((300, 20)), seed=0)
    assert m.n_frames == 300 and m.source == "generated"
    assert np.allclose(np.linalg.norm(m.rotations, axis=-1), 1.0) and np.all(m.rotations[..., 0] >= 0)


def test_noise_modes():
    rng = np.random.default_rng(0)
    z = sample_noise(rng, 2, 5)
    assert z.shape == (2, 5, 30) and np.all(z == z[:, :1])
    zf = sample_noise(rng, 2, 5, NoiseSpec("frame"))
    assert not np.allclose(zf[:, 0], zf[:, 1])
    with pytest.raises(GeneratorError):
        NoiseSpec("bogus")


def test_generator_input_validation():
    net = GeneratorNet(hidden=4)
    with pytest.raises(GeneratorError):
        net(np.zeros((1, 3, 19)), np.zeros((1, 3, 30)))
    with pytest.raises(GeneratorError):
        generate_rotations(net, np.full((3, 20), np.inf))


def test_adversarial_only_gradient_through_constant_discriminator():
    # lambda1 = lambda2 = 0 and a zero discriminator (score 0.5 everywhere)
    rng = np.random.default_rng(2)
    g = GeneratorNet(hidden=4, rng=rng, dropout=0.0)
    d = DiscriminatorNet(dropout=0.0)
    cond = rng.normal(size=(2, MIN_FRAMES, 20))
    noise = sample_noise(rng, 2, MIN_FRAMES)
    cfg = LossConfig(lambda1=0.0, lambda2=0.0)
    real = sequence_positions(quat.random(rng, (2, MIN_FRAMES, 21)))

    def loss():
        pos = ops.forward_kinematics(g(cond, noise), SKEL)
        st, _ = batch_st_loss(real, pos, [(1, 2), (3,)], 5.0, cfg)
        return generator_loss(d(pos, cond), st, cfg)

    assert np.isclose(float(loss().data), 2 * np.log(0.5) + cfg.eps)
    assert ndl.gradient_check(loss, g.parameters(), max_coords=6) < 1e-4


def test_smoothness_gradient_pulls_frames_together():
    rng = np.random.default_rng(3)
    g = GeneratorNet(hidden=8, rng=rng, dropout=0.0)
    cond = np.zeros((1, 8, 20))  # static condition
    noise = sample_noise(rng, 1, 8, NoiseSpec("frame"))
    opt = ndl.Adam(g.parameters(), base_lr=0.01)
    main = (4, 8, 12, 16, 20)

    def current():
        return smoothness(sequence_positions(g(cond, noise).data), [main], 5.0)[0]

    before = current()
    for _ in range(50):
        g.zero_grad()
        with ndl.Tape() as tape:
            pos = ops.forward_kinematics(g(cond, noise), SKEL)
            loss, _ = batch_st_loss(pos.data, pos, [main], 5.0, LossConfig(lambda1=0.0, lambda2=1.0))
        tape.backward(loss)
        opt.step()
    assert current() < before


def test_zero_learning_rate_leaves_parameters():
    rng = np.random.default_rng(4)
    g = GeneratorNet(hidden=4, rng=rng)
    before = g.state_dict()
    opt = ndl.Adam(g.parameters(), base_lr=0.0)
    with ndl.Tape() as tape:
        loss = ops.sum(g(rng.normal(size=(1, 4, 20)), sample_noise(rng, 1, 4)))
    tape.backward(loss)
    opt.step()
    assert all(np.array_equal(before[k], v) for k, v in g.state_dict().items())


# --- graph ------------------------------------------------------------------------------


@pytest.mark.parametrize("k,intra,inter", [(1, 20, 0), (3, 60, 42), (10, 200, 189)])
def test_edge_counts(k, intra, inter):
    g = build_st_graph(SKEL, k)
    assert (len(g.intra_edges), len(g.inter_edges)) == (intra, inter)


def test_two_joint_three_frame_edges():
    g = build_st_graph(Skeleton(["a", "b"], [None, 0], np.zeros((2, 3))), 3)
    assert set(g.intra_edges) == {(0, 1), (2, 3), (4, 5)}
    assert set(g.inter_edges) == {(0, 2), (1, 3), (2, 4), (3, 5)}
    assert g.n_edges == 7


def test_adjacency_symmetric_normalised():
    a = build_st_graph(SKEL, 4).adjacency
    assert (a != a.T).nnz == 0
    # D^-1/2 (A+I) D^-1/2 has spectral radius 1
    assert np.isclose(np.abs(np.linalg.eigvalsh(a.toarray())).max(), 1.0)


def test_pool_matrix():
    p = temporal_pool_matrix(5).toarray()
    assert p.shape == (3, 5) and np.allclose(p.sum(axis=1), 1.0)
    assert np.array_equal(p[2], [0, 0, 0, 0, 1.0])


# --- discriminator ----------------------------------------------------------------------


def test_zero_discriminator_is_one_half():
    out = DiscriminatorNet()(np.ones((3, 6, 21, 3)), np.ones((3, 6, 20))).data
    assert np.array_equal(out, np.full(3, 0.5))


def test_scores_inside_unit_interval():
    d = DiscriminatorNet(rng=np.random.default_rng(0))
    s = d(np.random.default_rng(1).normal(size=(4, 5, 21, 3)) * 1e4, np.zeros((4, 5, 20))).data
    assert np.all((s > 0) & (s < 1))


def test_min_frames():
    with pytest.raises(DiscriminatorError):
        DiscriminatorNet()(np.zeros((1, MIN_FRAMES - 1, 21, 3)), np.zeros((1, MIN_FRAMES - 1, 20)))


def test_discriminate_single_sequence():
    d = DiscriminatorNet(rng=np.random.default_rng(0))
    pos = np.random.default_rng(2).normal(size=(6, 21, 3))
    single = discriminate(d, pos, np.zeros((6, 20)))
    batch = d(pos[None], np.zeros((1, 6, 20))).data[0]
    assert np.isclose(single, batch, rtol=0, atol=1e-15)


def test_joint_permutation_invariance():
    # another topological order of the same rig: legs listed before the upper body
    names = list(SKEL.names)
    order = [0] + list(range(13, 21)) + list(range(1, 13))
    perm_names = [names[i] for i in order]
    perm_parents = [None if SKEL.parents[i] < 0 else order.index(SKEL.parents[i]) for i in order]
    perm = Skeleton(perm_names, perm_parents, SKEL.offsets[order])
    rng = np.random.default_rng(5)
    d1 = DiscriminatorNet(SKEL, rng=rng, dropout=0.0)
    d2 = DiscriminatorNet(perm, dropout=0.0)
    d2.load_state_dict(d1.state_dict())
    pos = sequence_positions(quat.random(rng, (2, 6, 21)))
    cond = rng.normal(size=(2, 6, 20))
    a = d1.logits(pos, cond).data
    b = d2.logits(pos[:, :, order], cond).data
    assert np.allclose(a, b, rtol=0, atol=1e-10)
