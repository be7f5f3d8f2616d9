"""Finite-difference gradient suites for every trainable component.

Each suite draws a few random parameter points, builds a deterministic
scalar loss and compares tape gradients against central differences.
Networks are full-size; only a random subset of coordinates per parameter
tensor is perturbed so the whole run stays well under two minutes.
Coordinates whose step straddles a LeakyReLU or clip kink are skipped (see
:func:`animgan.ndl.gradient_check`); a suite that has to skip more than half
of its coordinates fails.
"""

from dataclasses import dataclass

import numpy as np

from . import ndl
from .codec import _Net, reconstruction_loss
from .discriminator import DiscriminatorNet, MIN_FRAMES
from .generator import GeneratorNet, sample_noise
from .losses import LossConfig, batch_st_loss, discriminator_loss, generator_loss, phi, smoothness, st_loss
from .ndl import ops
from .ndl.gradcheck import gradient_check
from .skeleton import canonical_skeleton
from . import quat

__all__ = ["SuiteResult", "SUITES", "run_suite", "run_all", "TOLERANCE"]

TOLERANCE = 1e-4
POINTS = 3
MAX_COORDS = 8
STEP = 1e-5
# a kink that passes this guard biases the central difference by at most about half of it
KINK_TOL = TOLERANCE
# gradients are judged against ten times the rounding noise of the difference quotient
NOISE_FLOOR = 10.0 / TOLERANCE
MIN_COVERAGE = 0.5


@dataclass
class SuiteResult:
    name: str
    max_rel_error: float
    points: int
    checked: int = 0
    skipped: int = 0

    @property
    def coverage(self):
        total = self.checked + self.skipped
        return self.checked / total if total else 0.0

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE and self.coverage >= MIN_COVERAGE

    def to_dict(self):
        return {
            "suite": self.name,
            "max_rel_error": self.max_rel_error,
            "points": self.points,
            "checked": self.checked,
            "skipped": self.skipped,
            "passed": self.passed,
        }


def _rand_rotations(rng, shape):
    return quat.canonical(quat.random(rng, shape))


def _codec_point(rng):
    net = _Net(rng=rng)
    x = _rand_rotations(rng, (6, 21)).reshape(6, 84)

    def loss():
        return reconstruction_loss(net, ndl.Tensor(x), 1e-3)[0]

    return loss, net.parameters()


def _generator_point(rng):
    # generator -> FK -> L_ST, plus the adversarial term through a fixed D
    g = GeneratorNet(hidden=8, rng=rng, dropout=0.0)
    d = DiscriminatorNet(rng=rng, dropout=0.0)
    skel = canonical_skeleton()
    B, k = 2, MIN_FRAMES
    cond = rng.normal(size=(B, k, 20))
    noise = sample_noise(rng, B, k)
    # mild target poses keep L_ST small enough that rounding does not swamp the differences
    axes = rng.normal(size=(B, k, 21, 3))
    small = quat.from_axis_angle(axes, np.deg2rad(rng.uniform(0.0, 20.0, size=(B, k, 21))))
    real = ops.forward_kinematics(ndl.Tensor(small), skel).data
    mains = [(1, 4, 7), (2, 3)]
    cfg = LossConfig()

    def loss():
        q = g(cond, noise)
        pos = ops.forward_kinematics(q, skel)
        st, _ = batch_st_loss(real, pos, mains, 5.0, cfg)
        return generator_loss(d(pos, cond), st, cfg)

    return loss, g.parameters()


def _discriminator_point(rng):
    d = DiscriminatorNet(rng=rng, dropout=0.0)
    # random biases so no unit sits on a LeakyReLU kink
    for p in d.parameters():
        if p.data.ndim == 1:
            p.data[:] = rng.normal(0.0, 0.1, size=p.data.shape)
    skel = canonical_skeleton()
    k = MIN_FRAMES
    real = ops.forward_kinematics(ndl.Tensor(_rand_rotations(rng, (2, k, 21))), skel).data
    fake = ops.forward_kinematics(ndl.Tensor(_rand_rotations(rng, (2, k, 21))), skel).data
    cond = rng.normal(size=(2, k, 20))

    def loss():
        return discriminator_loss(d(real, cond), d(fake, cond), 0.9)

    return loss, d.parameters()


def _losses_point(rng):
    k = 5
    a = ndl.Param(rng.normal(0, 10, size=(2, k, 21, 3)))
    b = ndl.Param(rng.normal(0, 10, size=(2, k, 21, 3)))
    s_real = ndl.Param(rng.uniform(0.1, 0.9, size=3))
    s_fake = ndl.Param(rng.uniform(0.1, 0.9, size=3))
    mains = [(0, 5, 9), (3, 11, 12, 20)]
    cfg = LossConfig(lambda1=0.7, lambda2=0.3)

    def loss():
        terms = [
            ops.sum(phi(a, b, mains, 5.0)),
            ops.sum(smoothness(b, mains, 5.0)),
            st_loss(ops.getitem(a, 0), ops.getitem(b, 0), mains[0], 5.0, cfg),
            batch_st_loss(a, b, mains, 5.0, cfg)[0],
            generator_loss(s_fake, 0.0, cfg),
            discriminator_loss(s_real, s_fake, 0.9, cfg),
        ]
        # scaled to comparable sizes; unequal score weights keep the fake terms from cancelling
        scale = ndl.Tensor(np.array([1e-3, 1e-3, 1e-3, 1e-3, 1.0, 0.5]))
        return ops.sum(ops.concat([ops.reshape(t, (1,)) for t in terms], axis=0) * scale)

    return loss, [a, b, s_real, s_fake]


SUITES = {
    "codec": _codec_point,
    "generator": _generator_point,
    "discriminator": _discriminator_point,
    "losses": _losses_point,
}


def run_suite(name, seed=0, points=POINTS, max_coords=MAX_COORDS):
    if name not in SUITES:
        raise KeyError(f"unknown gradient suite {name!r}; choose from {sorted(SUITES)}")
    worst = 0.0
    checked = skipped = 0
    for i in range(points):
        rng = np.random.default_rng([seed, i, len(name)])
        loss, params = SUITES[name](rng)
        err, info = gradient_check(loss, params, h=STEP, return_details=True, max_coords=max_coords, rng=rng, kink_tol=KINK_TOL, noise_floor=NOISE_FLOOR)
        worst = max(worst, err)
        checked += info["checked"]
        skipped += info["skipped"]
    return SuiteResult(name, float(worst), points, checked, skipped)


def run_all(seed=0, points=POINTS, max_coords=MAX_COORDS):
    return [run_suite(n, seed, points, max_coords) for n in SUITES]
