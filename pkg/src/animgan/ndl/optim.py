"""SGD and Adam with the step-decay and linear-decay schedules used for training."""

from decimal import Decimal

import numpy as np

from .tape import NonFiniteError

__all__ = ["sgd_lr", "linear_decay_lr", "SGD", "Adam"]


def sgd_lr(epoch, base=0.01, factor=0.9, every=10):
    """Step decay: ``base * factor ** (epoch // every)``.

    The product is formed in decimal so that 0.01 * 0.9 gives the double
    nearest 0.009 rather than 0.009000000000000001.
    """
    n = int(epoch) // every
    return float(Decimal(repr(float(base))) * Decimal(repr(float(factor))) ** n)


def linear_decay_lr(step, base, total_steps):
    """Linear decay from ``base`` at step 0 to exactly 0 at ``total_steps``."""
    if total_steps <= 0:
        return 0.0
    frac = min(max(step, 0), total_steps) / total_steps
    return base * (1.0 - frac)


def _grads(params):
    out = []
    for p in params:
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {p.name or 'parameter'}")
        out.append(g)
    return out


class SGD:
    kind = "sgd"

    def __init__(self, params, base_lr=0.01, factor=0.9, every=10):
        self.params = list(params)
        self.base_lr = base_lr
        self.factor = factor
        self.every = every
        self.t = 0

    def lr(self, epoch):
        return sgd_lr(epoch, self.base_lr, self.factor, self.every)

    def step(self, epoch):
        lr = self.lr(epoch)
        for p, g in zip(self.params, _grads(self.params)):
            p.data = p.data - lr * g
        self.t += 1

    def state_dict(self):
        return {"kind": self.kind, "t": self.t, "arrays": {}}

    def load_state_dict(self, state):
        self.t = int(state["t"])


class Adam:
    """Adam with bias correction; the rate decays linearly to 0 at ``total_steps``.

    ``total_steps=None`` keeps the rate constant.
    """

    kind = "adam"

    def __init__(self, params, base_lr=0.1, total_steps=None, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.base_lr = base_lr
        self.total_steps = total_steps
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def lr(self, step=None):
        step = self.t if step is None else step
        if self.total_steps is None:
            return self.base_lr
        return linear_decay_lr(step, self.base_lr, self.total_steps)

    def step(self, epoch=None):
        grads = _grads(self.params)
        lr = self.lr()
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            p.data = p.data - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def state_dict(self):
        arrays = {f"m{i}": m for i, m in enumerate(self.m)}
        arrays.update({f"v{i}": v for i, v in enumerate(self.v)})
        return {"kind": self.kind, "t": self.t, "arrays": arrays}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        n = len(self.params)
        self.m = [np.array(state["arrays"][f"m{i}"], dtype=np.float64) for i in range(n)]
        self.v = [np.array(state["arrays"][f"v{i}"], dtype=np.float64) for i in range(n)]
