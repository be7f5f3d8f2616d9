"""Reverse-mode differentiation over an explicit operation tape.

Operations executed inside ``with Tape() as tape:`` append a backward
closure to the tape whenever one of their inputs requires a gradient.
``tape.backward(loss)`` replays the closures in reverse order.  Outside a
tape the same functions only compute values.
"""

import numpy as np

__all__ = ["Tensor", "Param", "Tape", "as_tensor", "active_tape", "NonFiniteError"]

_STACK = []


class NonFiniteError(FloatingPointError):
    pass


def active_tape():
    return _STACK[-1] if _STACK else None


class Tensor:
    __array_priority__ = 100
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    # operator sugar; implementations live in ops.py
    def __add__(self, o):
        from . import ops
        return ops.add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        from . import ops
        return ops.sub(self, o)

    def __rsub__(self, o):
        from . import ops
        return ops.sub(o, self)

    def __mul__(self, o):
        from . import ops
        return ops.mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        from . import ops
        return ops.div(self, o)

    def __rtruediv__(self, o):
        from . import ops
        return ops.div(o, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, o):
        from . import ops
        return ops.matmul(self, o)

    def __rmatmul__(self, o):
        from . import ops
        return ops.matmul(o, self)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def __pow__(self, p):
        from . import ops
        if p == 2:
            return ops.square(self)
        raise NotImplementedError("only squaring is supported")

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis, keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


class Param(Tensor):
    """A trainable tensor; gradients accumulate across backward passes."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.remove(self)
        return False

    def record(self, out, backward):
        self.nodes.append((out, backward))

    def backward(self, loss, seed=None):
        """Accumulate d(loss)/d(param) into every reachable ``requires_grad`` tensor."""
        if not np.all(np.isfinite(loss.data)):
            raise NonFiniteError("loss is not finite")
        loss.grad = np.ones_like(loss.data) if seed is None else np.asarray(seed, dtype=np.float64)
        for out, fn in reversed(self.nodes):
            if out.grad is not None:
                fn(out.grad)
        # intermediate gradients are not needed after the sweep
        for out, _ in self.nodes:
            if not isinstance(out, Param):
                out.grad = None
        self.nodes = []


def accumulate(t, g):
    if not t.requires_grad:
        return
    if g.shape != t.data.shape:
        g = unbroadcast(g, t.data.shape)
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def make(data, parents, backward):
    """Wrap an op result; register ``backward(grad_out)`` if any parent needs it."""
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(out, backward)
    return out
