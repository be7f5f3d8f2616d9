"""Hot inner loops: forward kinematics, LSTM recurrence, nearest-neighbour search.

Each kernel exists twice: a vectorised numpy version (``*_np``) and an
explicit-loop version compiled with numba (``*_nb``).  The public names
dispatch to one of them according to :data:`animgan._accel.USE_NUMBA`.
Both versions compute the same arithmetic; they agree to round-off, not
bit-for-bit, so a training run is only reproducible within one backend.
"""

import math

import numpy as np

from ._accel import USE_NUMBA, njit

__all__ = [
    "fk_forward",
    "fk_backward",
    "lstm_forward",
    "lstm_backward",
    "nn_min_sqdist",
    "nn_min_sqdist_cells",
    "BACKEND",
]


# ---------------------------------------------------------------------------
# forward kinematics
# ---------------------------------------------------------------------------
#
# Positions are hip-relative: the root sits at the origin and every child is
# placed at parent_position + R(parent_global) @ offset.  Global rotations
# compose as parent_global * local.  R(q) uses the standard unit-quaternion
# matrix; the backward pass differentiates that exact polynomial.


def _qmul_np(p, q):
    pw, px, py, pz = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    qw, qx, qy, qz = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            pw * qw - px * qx - py * qy - pz * qz,
            pw * qx + px * qw + py * qz - pz * qy,
            pw * qy - px * qz + py * qw + pz * qx,
            pw * qz + px * qy - py * qx + pz * qw,
        ],
        axis=-1,
    )


def _qconj_np(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _qrot_np(q, v):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    a, b, c = v[..., 0], v[..., 1], v[..., 2]
    return np.stack(
        [
            (1 - 2 * (y * y + z * z)) * a + 2 * (x * y - w * z) * b + 2 * (x * z + w * y) * c,
            2 * (x * y + w * z) * a + (1 - 2 * (x * x + z * z)) * b + 2 * (y * z - w * x) * c,
            2 * (x * z - w * y) * a + 2 * (y * z + w * x) * b + (1 - 2 * (x * x + y * y)) * c,
        ],
        axis=-1,
    )


def _qrot_vjp_np(q, v, g):
    """Gradient of ``g . R(q) v`` with respect to q."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    a, b, c = v[..., 0], v[..., 1], v[..., 2]
    g0, g1, g2 = g[..., 0], g[..., 1], g[..., 2]
    dw = g0 * (-2 * z * b + 2 * y * c) + g1 * (2 * z * a - 2 * x * c) + g2 * (-2 * y * a + 2 * x * b)
    dx = g0 * (2 * y * b + 2 * z * c) + g1 * (2 * y * a - 4 * x * b - 2 * w * c) + g2 * (2 * z * a + 2 * w * b - 4 * x * c)
    dy = g0 * (-4 * y * a + 2 * x * b + 2 * w * c) + g1 * (2 * x * a + 2 * z * c) + g2 * (-2 * w * a + 2 * z * b - 4 * y * c)
    dz = g0 * (-4 * z * a - 2 * w * b + 2 * x * c) + g1 * (2 * w * a - 4 * z * b + 2 * y * c) + g2 * (2 * x * a + 2 * y * b)
    return np.stack([dw, dx, dy, dz], axis=-1)


def fk_forward_np(quats, offsets, parents):
    m, nj = quats.shape[0], quats.shape[1]
    pos = np.zeros((m, nj, 3))
    glob = np.empty((m, nj, 4))
    glob[:, 0] = quats[:, 0]
    for j in range(1, nj):
        p = parents[j]
        glob[:, j] = _qmul_np(glob[:, p], quats[:, j])
        pos[:, j] = pos[:, p] + _qrot_np(glob[:, p], offsets[j])
    return pos, glob


def fk_backward_np(quats, glob, offsets, parents, dpos):
    nj = quats.shape[1]
    dpos = dpos.copy()
    dglob = np.zeros_like(glob)
    dq = np.zeros_like(quats)
    for j in range(nj - 1, 0, -1):
        p = parents[j]
        dpos[:, p] += dpos[:, j]
        dglob[:, p] += _qrot_vjp_np(glob[:, p], np.broadcast_to(offsets[j], dpos[:, j].shape), dpos[:, j])
        dglob[:, p] += _qmul_np(dglob[:, j], _qconj_np(quats[:, j]))
        dq[:, j] += _qmul_np(_qconj_np(glob[:, p]), dglob[:, j])
    dq[:, 0] += dglob[:, 0]
    return dq


@njit
def _qmul_into(out, pw, px, py, pz, qw, qx, qy, qz):
    out[0] = pw * qw - px * qx - py * qy - pz * qz
    out[1] = pw * qx + px * qw + py * qz - pz * qy
    out[2] = pw * qy - px * qz + py * qw + pz * qx
    out[3] = pw * qz + px * qy - py * qx + pz * qw


@njit
def fk_forward_nb(quats, offsets, parents):
    m, nj = quats.shape[0], quats.shape[1]
    pos = np.zeros((m, nj, 3))
    glob = np.empty((m, nj, 4))
    for i in range(m):
        for c in range(4):
            glob[i, 0, c] = quats[i, 0, c]
        for j in range(1, nj):
            p = parents[j]
            w, x, y, z = glob[i, p, 0], glob[i, p, 1], glob[i, p, 2], glob[i, p, 3]
            _qmul_into(glob[i, j], w, x, y, z, quats[i, j, 0], quats[i, j, 1], quats[i, j, 2], quats[i, j, 3])
            a, b, c3 = offsets[j, 0], offsets[j, 1], offsets[j, 2]
            pos[i, j, 0] = pos[i, p, 0] + (1 - 2 * (y * y + z * z)) * a + 2 * (x * y - w * z) * b + 2 * (x * z + w * y) * c3
            pos[i, j, 1] = pos[i, p, 1] + 2 * (x * y + w * z) * a + (1 - 2 * (x * x + z * z)) * b + 2 * (y * z - w * x) * c3
            pos[i, j, 2] = pos[i, p, 2] + 2 * (x * z - w * y) * a + 2 * (y * z + w * x) * b + (1 - 2 * (x * x + y * y)) * c3
    return pos, glob


@njit
def fk_backward_nb(quats, glob, offsets, parents, dpos_in):
    m, nj = quats.shape[0], quats.shape[1]
    dpos = dpos_in.copy()
    dglob = np.zeros_like(glob)
    dq = np.zeros_like(quats)
    tmp = np.empty(4)
    for i in range(m):
        for j in range(nj - 1, 0, -1):
            p = parents[j]
            g0, g1, g2 = dpos[i, j, 0], dpos[i, j, 1], dpos[i, j, 2]
            dpos[i, p, 0] += g0
            dpos[i, p, 1] += g1
            dpos[i, p, 2] += g2
            w, x, y, z = glob[i, p, 0], glob[i, p, 1], glob[i, p, 2], glob[i, p, 3]
            a, b, c = offsets[j, 0], offsets[j, 1], offsets[j, 2]
            dglob[i, p, 0] += g0 * (-2 * z * b + 2 * y * c) + g1 * (2 * z * a - 2 * x * c) + g2 * (-2 * y * a + 2 * x * b)
            dglob[i, p, 1] += g0 * (2 * y * b + 2 * z * c) + g1 * (2 * y * a - 4 * x * b - 2 * w * c) + g2 * (2 * z * a + 2 * w * b - 4 * x * c)
            dglob[i, p, 2] += g0 * (-4 * y * a + 2 * x * b + 2 * w * c) + g1 * (2 * x * a + 2 * z * c) + g2 * (-2 * w * a + 2 * z * b - 4 * y * c)
            dglob[i, p, 3] += g0 * (-4 * z * a - 2 * w * b + 2 * x * c) + g1 * (2 * w * a - 4 * z * b + 2 * y * c) + g2 * (2 * x * a + 2 * y * b)
            # glob_j = glob_p * q_j
            gw, gx, gy, gz = dglob[i, j, 0], dglob[i, j, 1], dglob[i, j, 2], dglob[i, j, 3]
            _qmul_into(tmp, gw, gx, gy, gz, quats[i, j, 0], -quats[i, j, 1], -quats[i, j, 2], -quats[i, j, 3])
            for c4 in range(4):
                dglob[i, p, c4] += tmp[c4]
            _qmul_into(tmp, w, -x, -y, -z, gw, gx, gy, gz)
            for c4 in range(4):
                dq[i, j, c4] += tmp[c4]
        for c4 in range(4):
            dq[i, 0, c4] += dglob[i, 0, c4]
    return dq


# ---------------------------------------------------------------------------
# LSTM recurrence
# ---------------------------------------------------------------------------
#
# ``xp`` holds the input projections x_t @ Wx + b for every step, shape
# (B, T, 4H) with gate blocks ordered (input, forget, cell, output).  Initial
# hidden and cell states are zero.  ``gates`` caches post-activation values.


def _sigmoid(x):
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def lstm_forward_np(xp, wh):
    b, t_len, h4 = xp.shape
    h = h4 // 4
    hs = np.empty((b, t_len, h))
    cs = np.empty((b, t_len, h))
    gates = np.empty((b, t_len, h4))
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    for t in range(t_len):
        a = xp[:, t] + h_prev @ wh
        i = _sigmoid(a[:, :h])
        f = _sigmoid(a[:, h:2 * h])
        g = np.tanh(a[:, 2 * h:3 * h])
        o = _sigmoid(a[:, 3 * h:])
        c_prev = f * c_prev + i * g
        h_prev = o * np.tanh(c_prev)
        hs[:, t] = h_prev
        cs[:, t] = c_prev
        gates[:, t, :h] = i
        gates[:, t, h:2 * h] = f
        gates[:, t, 2 * h:3 * h] = g
        gates[:, t, 3 * h:] = o
    return hs, cs, gates


def lstm_backward_np(dhs, wh, hs, cs, gates):
    b, t_len, h = hs.shape
    dxp = np.empty((b, t_len, 4 * h))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    zeros = np.zeros((b, h))
    for t in range(t_len - 1, -1, -1):
        i = gates[:, t, :h]
        f = gates[:, t, h:2 * h]
        g = gates[:, t, 2 * h:3 * h]
        o = gates[:, t, 3 * h:]
        c_prev = cs[:, t - 1] if t > 0 else zeros
        h_prev = hs[:, t - 1] if t > 0 else zeros
        dh = dhs[:, t] + dh_next
        tc = np.tanh(cs[:, t])
        dc = dc_next + dh * o * (1.0 - tc * tc)
        da = dxp[:, t]
        da[:, :h] = dc * g * i * (1.0 - i)
        da[:, h:2 * h] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * h:3 * h] = dc * i * (1.0 - g * g)
        da[:, 3 * h:] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dwh += h_prev.T @ da
        dh_next = da @ wh.T
    return dxp, dwh


@njit
def _sig_nb(x):
    # exp is several times cheaper than scalar tanh in compiled code;
    # overflow of exp gives the correct limits 0 and 1
    return 1.0 / (1.0 + math.exp(-x))


@njit
def _tanh_nb(x):
    return 2.0 / (1.0 + math.exp(-2.0 * x)) - 1.0


@njit
def lstm_forward_nb(xp, wh):
    b, t_len, h4 = xp.shape
    h = h4 // 4
    hs = np.empty((b, t_len, h))
    cs = np.empty((b, t_len, h))
    gates = np.empty((b, t_len, h4))
    h_prev = np.zeros((b, h))
    c_prev = np.zeros((b, h))
    for t in range(t_len):
        rec = np.dot(h_prev, wh)
        for n in range(b):
            for u in range(h):
                ai = xp[n, t, u] + rec[n, u]
                af = xp[n, t, h + u] + rec[n, h + u]
                ag = xp[n, t, 2 * h + u] + rec[n, 2 * h + u]
                ao = xp[n, t, 3 * h + u] + rec[n, 3 * h + u]
                i = _sig_nb(ai)
                f = _sig_nb(af)
                g = _tanh_nb(ag)
                o = _sig_nb(ao)
                c = f * c_prev[n, u] + i * g
                c_prev[n, u] = c
                h_prev[n, u] = o * _tanh_nb(c)
                gates[n, t, u] = i
                gates[n, t, h + u] = f
                gates[n, t, 2 * h + u] = g
                gates[n, t, 3 * h + u] = o
        hs[:, t, :] = h_prev
        cs[:, t, :] = c_prev
    return hs, cs, gates


@njit
def lstm_backward_nb(dhs, wh, hs, cs, gates):
    b, t_len, h = hs.shape
    dxp = np.empty((b, t_len, 4 * h))
    dwh = np.zeros_like(wh)
    dh_next = np.zeros((b, h))
    dc_next = np.zeros((b, h))
    da = np.empty((b, 4 * h))
    h_prev = np.zeros((b, h))
    for t in range(t_len - 1, -1, -1):
        for n in range(b):
            for u in range(h):
                i = gates[n, t, u]
                f = gates[n, t, h + u]
                g = gates[n, t, 2 * h + u]
                o = gates[n, t, 3 * h + u]
                c_prev = cs[n, t - 1, u] if t > 0 else 0.0
                h_prev[n, u] = hs[n, t - 1, u] if t > 0 else 0.0
                dh = dhs[n, t, u] + dh_next[n, u]
                tc = _tanh_nb(cs[n, t, u])
                dc = dc_next[n, u] + dh * o * (1.0 - tc * tc)
                da[n, u] = dc * g * i * (1.0 - i)
                da[n, h + u] = dc * c_prev * f * (1.0 - f)
                da[n, 2 * h + u] = dc * i * (1.0 - g * g)
                da[n, 3 * h + u] = dh * tc * o * (1.0 - o)
                dc_next[n, u] = dc * f
        dxp[:, t, :] = da
        dwh += np.dot(h_prev.T.copy(), da)
        dh_next = np.dot(da, wh.T.copy())
    return dxp, dwh


# ---------------------------------------------------------------------------
# nearest-neighbour search
# ---------------------------------------------------------------------------


def nn_min_sqdist_np(queries, store):
    """Squared Euclidean distance from each query row to its nearest store row."""
    out = np.empty(len(queries))
    # chunked to bound the (chunk, S, D) temporary
    step = max(1, 2 ** 22 // max(1, store.size))
    for s in range(0, len(queries), step):
        diff = queries[s:s + step, None, :] - store[None, :, :]
        out[s:s + step] = np.einsum("qsd,qsd->qs", diff, diff).min(axis=1)
    return out


@njit
def nn_min_sqdist_nb(queries, store):
    nq, d = queries.shape
    ns = store.shape[0]
    out = np.empty(nq)
    for a in range(nq):
        best = np.inf
        for s in range(ns):
            acc = 0.0
            for k in range(d):
                diff = queries[a, k] - store[s, k]
                acc += diff * diff
                if acc >= best:
                    break
            if acc < best:
                best = acc
        out[a] = best
    return out


def nn_min_sqdist_cells_np(queries, store):
    """Per-cell nearest neighbour: queries (C, Q, D), store (C, S, D) -> (C, Q)."""
    diff = queries[:, :, None, :] - store[:, None, :, :]
    return np.einsum("cqsd,cqsd->cqs", diff, diff).min(axis=2)


@njit
def nn_min_sqdist_cells_nb(queries, store):
    nc = queries.shape[0]
    out = np.empty((nc, queries.shape[1]))
    for c in range(nc):
        out[c] = nn_min_sqdist_nb(queries[c], store[c])
    return out


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def fk_forward(quats, offsets, parents):
    quats = np.ascontiguousarray(quats, dtype=np.float64)
    offsets = np.ascontiguousarray(offsets, dtype=np.float64)
    parents = np.ascontiguousarray(parents, dtype=np.int64)
    if USE_NUMBA:
        return fk_forward_nb(quats, offsets, parents)
    return fk_forward_np(quats, offsets, parents)


def fk_backward(quats, glob, offsets, parents, dpos):
    args = (
        np.ascontiguousarray(quats, dtype=np.float64),
        np.ascontiguousarray(glob, dtype=np.float64),
        np.ascontiguousarray(offsets, dtype=np.float64),
        np.ascontiguousarray(parents, dtype=np.int64),
        np.ascontiguousarray(dpos, dtype=np.float64),
    )
    if USE_NUMBA:
        return fk_backward_nb(*args)
    return fk_backward_np(*args)


def lstm_forward(xp, wh):
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    wh = np.ascontiguousarray(wh, dtype=np.float64)
    if USE_NUMBA:
        return lstm_forward_nb(xp, wh)
    return lstm_forward_np(xp, wh)


def lstm_backward(dhs, wh, hs, cs, gates):
    args = tuple(np.ascontiguousarray(a, dtype=np.float64) for a in (dhs, wh, hs, cs, gates))
    if USE_NUMBA:
        return lstm_backward_nb(*args)
    return lstm_backward_np(*args)


def nn_min_sqdist(queries, store):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    store = np.ascontiguousarray(store, dtype=np.float64)
    if USE_NUMBA:
        return nn_min_sqdist_nb(queries, store)
    return nn_min_sqdist_np(queries, store)


def nn_min_sqdist_cells(queries, store):
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    store = np.ascontiguousarray(store, dtype=np.float64)
    if USE_NUMBA:
        return nn_min_sqdist_cells_nb(queries, store)
    return nn_min_sqdist_cells_np(queries, store)


BACKEND = "numba" if USE_NUMBA else "numpy"
