import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from animgan import ndl, quat
from animgan.ndl import ops
from animgan.skeleton import canonical_skeleton, sequence_positions


def check(fn, *arrays, tol=1e-6):
    params = [ndl.Param(np.array(a, dtype=float)) for a in arrays]
    err = ndl.gradient_check(lambda: fn(*params), params)
    assert err < tol, err


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# --- per-op gradients ------------------------------------------------------------------


R = np.random.default_rng(0)
A = R.normal(size=(3, 4))
B = R.normal(size=(3, 4))
POS = R.uniform(0.5, 2.0, size=(3, 4))


@pytest.mark.parametrize(
    "fn,args",
    [
        (lambda a, b: ops.sum((a + b) * (a - b)), (A, B)),
        (lambda a, b: ops.sum(ops.div(a, b)), (A, POS)),
        (lambda a: ops.sum(ops.exp(a) + ops.neg(ops.square(a))), (A,)),
        (lambda a: ops.sum(ops.log(a) + ops.sqrt(a)), (POS,)),
        (lambda a: ops.sum(ops.sigmoid(a) * ops.tanh(a)), (A,)),
        (lambda a: ops.mean(ops.reshape(a, (4, 3)) * np.arange(12.0).reshape(4, 3)), (A,)),
        (lambda a: ops.sum(ops.transpose(a, (1, 0)) * np.arange(12.0).reshape(4, 3)), (A,)),
        (lambda a: ops.sum(ops.square(ops.getitem(a, (slice(0, 2), 1)))), (A,)),
        (lambda a: ops.sum(ops.square(ops.take(a, np.array([0, 0, 2]), axis=0))), (A,)),
        (lambda a, b: ops.sum(ops.square(ops.concat([a, b], axis=1))), (A, B)),
        (lambda a: ops.sum(ops.square(ops.broadcast_to(ops.getitem(a, 0), (5, 4)))), (A,)),
        (lambda a, b: ops.sum(ops.square(ops.matmul(a, ops.transpose(b, (1, 0))))), (A, B)),
        (lambda a: ops.sum(ops.square(ops.sum(a, axis=0, keepdims=True))), (A,)),
    ],
)
def test_op_gradients(fn, args):
    check(fn, *args)


def test_abs_clip_leaky_away_from_kinks():
    x = np.array([[-1.3, 0.4, 2.2], [0.7, -0.2, 1.9]])
    check(lambda a: ops.sum(ops.abs(a) + ops.clip(a, -1.0, 1.0) * 3 + ops.leaky_relu(a) * 2), x)


def test_spmm_gradient():
    adj = sp.csr_matrix(np.array([[0.5, 0.5, 0], [0.2, 0.6, 0.2], [0, 1.0, 0]]))
    check(lambda a: ops.sum(ops.square(ops.spmm(adj, a))), R.normal(size=(2, 3, 4)))


def test_lstm_gradient():
    x = R.normal(size=(2, 3, 4))
    wx = R.normal(size=(4, 8)) * 0.5
    wh = R.normal(size=(2, 8)) * 0.5
    b = R.normal(size=8) * 0.1
    for reverse in (False, True):
        check(lambda *p: ops.sum(ops.square(ops.lstm(*p, reverse=reverse))), x, wx, wh, b)


def test_quat_normalize_gradient():
    q = R.normal(size=(3, 4))
    w = R.normal(size=(3, 4))
    check(lambda a: ops.sum(ops.quat_normalize(a) * w), q)


def test_fk_gradient():
    skel = canonical_skeleton()
    q = quat.random(R, (2, 21))
    w = R.normal(size=(2, 21, 3))
    check(lambda a: ops.sum(ops.forward_kinematics(ops.quat_normalize(a), skel) * w), q)


def test_fk_op_matches_reference():
    q = quat.random(R, (2, 3, 21))
    got = ops.forward_kinematics(ndl.Tensor(q), canonical_skeleton()).data
    assert np.allclose(got, sequence_positions(q), atol=1e-12)


def test_broadcast_add_unbroadcasts():
    check(lambda a, b: ops.sum(ops.square(a + b)), A, R.normal(size=4))


# --- tape semantics --------------------------------------------------------------------


def test_gradients_accumulate_over_reuse():
    p = ndl.Param(np.array([2.0]))
    with ndl.Tape() as tape:
        y = ops.sum(p * p + p)
    tape.backward(y)
    assert np.allclose(p.grad, [5.0])


def test_non_finite_gradient_raises():
    p = ndl.Param(np.array([0.0]))
    with ndl.Tape() as tape:
        y = ops.sum(ops.sqrt(p))
    with pytest.raises(ndl.NonFiniteError), np.errstate(divide="ignore"):
        tape.backward(y)
        ndl.Adam([p]).step()


# --- gradient checker ------------------------------------------------------------------


def test_gradcheck_quadratic_exact():
    p = ndl.Param(np.array([3.0]))
    assert np.allclose(ndl.analytic_gradients(lambda: ops.sum(p * p), [p])[0], 6.0)
    assert ndl.gradient_check(lambda: ops.sum(p * p), [p]) < 1e-10


def test_gradcheck_constant():
    p = ndl.Param(np.array([1.0, 2.0]))
    g = ndl.analytic_gradients(lambda: ops.sum(p * 0.0) + 4.0, [p])[0]
    assert np.array_equal(g, np.zeros(2))
    assert ndl.gradient_check(lambda: ops.sum(p * 0.0) + 4.0, [p]) == 0.0


def test_gradcheck_catches_wrong_backward():
    def bad_square(a):
        a = ndl.as_tensor(a)
        # derivative off by a factor 1.01
        return ndl.tape.make(a.data ** 2, (a,), lambda g: ndl.tape.accumulate(a, g * 2.02 * a.data))

    p = ndl.Param(R.normal(size=5))
    assert ndl.gradient_check(lambda: ops.sum(bad_square(p)), [p]) > 1e-3


def test_gradcheck_kink_guard_skips_straddling_step():
    p = ndl.Param(np.array([0.0, 1.0]))
    err, info = ndl.gradient_check(lambda: ops.sum(ops.abs(p)), [p], return_details=True, kink_tol=1e-4)
    assert info["skipped"] == 1 and info["checked"] == 1 and err < 1e-8


# --- layers ----------------------------------------------------------------------------


def test_zero_lstm_gives_zero_states():
    lstm = ndl.LSTM(3, 4)
    out = lstm(np.ones((1, 5, 3))).data
    assert np.array_equal(out, np.zeros((1, 5, 4)))


def test_lstm_single_step_by_hand():
    wx = np.array([[0.5, -0.3, 0.8, 1.2]])  # gate order i, f, g, o with H=1
    wh = np.zeros((1, 4))
    b = np.array([0.1, 0.2, -0.1, 0.0])
    x = 0.7
    a = x * wx[0] + b
    c = sigmoid(a[0]) * np.tanh(a[2])
    h = sigmoid(a[3]) * np.tanh(c)
    out = ops.lstm(np.array([[[x]]]), wx, wh, b).data
    assert np.isclose(out[0, 0, 0], h, atol=1e-14)


def test_lstm_constant_input_without_recurrence_has_equal_states():
    # zero recurrent weights and zero forget gate make every step identical
    wx = np.array([[0.4, -50.0, 0.9, 0.3]])
    out = ops.lstm(np.full((1, 3, 1), 0.8), wx, np.zeros((1, 4)), np.array([0.0, -50.0, 0.0, 0.0])).data
    assert np.allclose(out[0, :, 0], out[0, 0, 0], atol=1e-12)


def test_bilstm_palindrome_symmetry():
    rng = np.random.default_rng(3)
    bi = ndl.BiLSTM(2, 3, rng)
    bi.bwd.load_state_dict(bi.fwd.state_dict())
    x = rng.normal(size=(1, 5, 2))
    x = np.concatenate([x[:, :3], x[:, :2][:, ::-1]], axis=1)  # palindrome of length 5
    out = bi(x).data[0]
    fwd, bwd = out[:, :3], out[:, 3:]
    assert np.allclose(fwd, bwd[::-1], atol=1e-14)


def test_bilstm_single_step_is_two_independent_cells():
    rng = np.random.default_rng(4)
    bi = ndl.BiLSTM(2, 3, rng)
    x = rng.normal(size=(1, 1, 2))
    out = bi(x).data
    assert np.allclose(out, np.concatenate([bi.fwd(x).data, bi.bwd(x).data], axis=-1))


def test_zero_bilstm():
    assert np.array_equal(ndl.BiLSTM(2, 3)(np.ones((2, 4, 2))).data, np.zeros((2, 4, 6)))


def test_graph_conv_identity():
    x = R.normal(size=(4, 3))
    assert np.allclose(ndl.graph_conv(x, sp.identity(4, format="csr"), np.eye(3)).data, x)


def test_graph_conv_path_by_hand():
    a = np.array([[1, 1, 0], [1, 1, 1], [0, 1, 1]], dtype=float)  # path plus self loops
    d = np.array([2.0, 3.0, 2.0]) ** -0.5
    norm = sp.csr_matrix(d[:, None] * a * d[None, :])
    out = ndl.graph_conv(np.ones((3, 1)), norm, np.eye(1)).data[:, 0]
    want = [0.5 + 1 / np.sqrt(6), 2 / np.sqrt(6) + 1 / 3, 0.5 + 1 / np.sqrt(6)]
    assert np.allclose(out, want, atol=1e-15)


def test_graph_conv_zero_features():
    norm = sp.identity(3, format="csr")
    assert np.array_equal(ndl.graph_conv(np.zeros((3, 2)), norm, R.normal(size=(2, 2))).data, np.zeros((3, 2)))


def test_dropout_rate_and_inference_identity():
    rng = np.random.default_rng(0)
    x = np.ones(100_000)
    y = ops.dropout(x, 0.5, rng, training=True).data
    assert abs(np.mean(y == 0) - 0.5) < 0.01 and set(np.unique(y)) == {0.0, 2.0}
    assert np.array_equal(ops.dropout(x, 0.5, rng, training=False).data, x)


def test_module_state_round_trip():
    rng = np.random.default_rng(1)
    a, b = ndl.Dense(3, 2, rng), ndl.Dense(3, 2)
    b.load_state_dict(a.state_dict())
    assert all(np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))
    with pytest.raises(KeyError):
        b.load_state_dict({"weight": np.zeros((3, 2))})


# --- optimisers ------------------------------------------------------------------------


def test_sgd_first_step():
    p = ndl.Param(np.array([0.0]))
    p.grad = np.array([1.0])
    ndl.SGD([p]).step(0)
    assert p.data[0] == -0.01


def test_sgd_schedule_values():
    assert [ndl.sgd_lr(e) for e in (0, 9, 10, 19, 20)] == [0.01, 0.01, 0.009, 0.009, 0.0081]


def test_adam_first_step_by_hand():
    p = ndl.Param(np.array([0.0]))
    p.grad = np.array([1.0])
    ndl.Adam([p], base_lr=0.1).step()
    # m_hat = 1, v_hat = 1
    assert np.isclose(p.data[0], -0.1 / (1 + 1e-8), atol=1e-15)


@given(st.floats(-1e3, 1e3).filter(lambda g: abs(g) > 1e-6), st.integers(1, 20))
def test_adam_step_size_bounded_by_lr(g, steps):
    p = ndl.Param(np.array([0.0]))
    opt = ndl.Adam([p], base_lr=0.05)
    for _ in range(steps):
        before = p.data.copy()
        p.grad = np.array([g])
        opt.step()
        # with a constant gradient |m_hat| / sqrt(v_hat) = 1
        assert abs(p.data[0] - before[0]) <= 0.05 * (1 + 1e-9)


def test_adam_linear_decay_and_zero_lr_freezes():
    p = ndl.Param(np.array([1.0]))
    opt = ndl.Adam([p], base_lr=0.1, total_steps=4)
    assert [opt.lr(s) for s in range(6)] == pytest.approx([0.1, 0.075, 0.05, 0.025, 0.0, 0.0], abs=1e-15)
    opt.t = 4
    p.grad = np.array([3.0])
    opt.step()
    assert p.data[0] == 1.0


def test_optimizer_state_round_trip():
    p = ndl.Param(np.array([1.0, 2.0]))
    opt = ndl.Adam([p])
    p.grad = np.array([0.5, -0.5])
    opt.step()
    q = ndl.Param(p.data.copy())
    opt2 = ndl.Adam([q])
    opt2.load_state_dict(opt.state_dict())
    p.grad = q.grad = np.array([0.1, 0.2])
    opt.step()
    opt2.step()
    assert np.array_equal(p.data, q.data)
