"""Quaternion helpers on (..., 4) arrays in (w, x, y, z) order."""

import warnings

import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def mul(p, q):
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
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


def conj(q):
    return np.asarray(q, dtype=np.float64) * np.array([1.0, -1.0, -1.0, -1.0])


def canonical(q):
    """Flip sign so that w >= 0 (q and -q are the same rotation)."""
    q = np.asarray(q, dtype=np.float64)
    return np.where(q[..., :1] < 0.0, -q, q)


def normalize(q, eps=1e-8):
    """Unit-normalise and canonicalise; near-zero vectors become the identity."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    out = np.where(n < eps, IDENTITY, q / np.where(n < eps, 1.0, n))
    return canonical(out)


def rotate(q, v):
    """Rotate vectors ``v`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    return np.einsum("...ij,...j->...i", to_matrix(q), v)


def to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_axis_angle(axis, angle):
    """Quaternion for a rotation of ``angle`` radians about ``axis``."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def angle(q):
    """Rotation angle in radians, in [0, pi]."""
    q = normalize(q)
    return 2.0 * np.arccos(np.clip(q[..., 0], -1.0, 1.0))


def geodesic(p, q):
    """Angle of the relative rotation between p and q, in radians."""
    d = np.abs(np.sum(normalize(p) * normalize(q), axis=-1))
    return 2.0 * np.arccos(np.clip(d, -1.0, 1.0))


def slerp(p, q, t):
    """Shortest-arc spherical interpolation, renormalised and canonical."""
    p = normalize(p)
    q = normalize(q)
    t = np.asarray(t, dtype=np.float64)[..., None]
    d = np.sum(p * q, axis=-1, keepdims=True)
    q = np.where(d < 0.0, -q, q)
    d = np.abs(d)
    theta = np.arccos(np.clip(d, -1.0, 1.0))
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-9
    safe = np.where(near, 1.0, sin_theta)
    wa = np.where(near, 1.0 - t, np.sin((1.0 - t) * theta) / safe)
    wb = np.where(near, t, np.sin(t * theta) / safe)
    return normalize(wa * p + wb * q)


def from_euler(order, angles_deg):
    """Intrinsic Euler angles to quaternions.

    ``order`` is a three-letter axis string such as ``"ZXY"``; the rotation
    is R = R_Z(a0) R_X(a1) R_Y(a2), which is how BVH channel lists compose.
    """
    xyzw = Rotation.from_euler(order.upper(), np.asarray(angles_deg, dtype=np.float64), degrees=True).as_quat()
    return canonical(np.concatenate([xyzw[..., 3:], xyzw[..., :3]], axis=-1))


def to_euler(order, q):
    """Inverse of :func:`from_euler`; angles in degrees."""
    q = normalize(q)
    xyzw = np.concatenate([q[..., 1:], q[..., :1]], axis=-1)
    with warnings.catch_warnings():
        # gimbal lock still yields a valid decomposition
        warnings.simplefilter("ignore", UserWarning)
        return Rotation.from_quat(xyzw).as_euler(order.upper(), degrees=True)


def random(rng, shape=()):
    """Uniformly distributed unit quaternions (canonical sign)."""
    if isinstance(shape, int):
        shape = (shape,)
    return normalize(rng.normal(size=tuple(shape) + (4,)))
