"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every operation whose result depends on a parameter;
:func:`backward` walks it in reverse and returns a name -> gradient mapping.

    tape = Tape()
    w = tape.param("w", np.ones((3, 1)))
    x = tape.constant(np.arange(6.0).reshape(2, 3))
    loss = sqnorm(x @ w)
    grads = backward(tape, loss)   # {"w": array of shape (3, 1)}

Broadcasting is limited to adding a bias vector (n,) to a batch (m, n).
"""

import numpy as np

from . import kernels
from .errors import InvalidInputError, ShapeError


class Tape:
    """Ordered record of the operations in one forward pass."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def param(self, name, value):
        if name in self.params:
            raise InvalidInputError(f"parameter {name!r} already on tape")
        t = Tensor(value, self, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def constant(self, value):
        return Tensor(value, self)

    def _record(self, value, op, parents, vjp):
        needs = any(p.requires_grad for p in parents)
        out = Tensor(value, self, requires_grad=needs, op=op)
        if needs:
            out.parents = parents
            out.vjp = vjp
            self.nodes.append(out)
        return out


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "name", "op", "parents", "vjp")

    def __init__(self, value, tape, requires_grad=False, name=None, op="leaf"):
        self.value = np.array(value, dtype=np.float64)
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self.parents = ()
        self.vjp = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


def _lift(x, tape):
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise InvalidInputError("operands live on different tapes")
        return x
    return tape.constant(x)


def _pair(a, b):
    tape = a.tape if isinstance(a, Tensor) else getattr(b, "tape", None)
    if tape is None:
        raise InvalidInputError("at least one operand must be a Tensor")
    return _lift(a, tape), _lift(b, tape), tape


def _broadcast_kind(op, sa, sb):
    if sa == sb:
        return None
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return "b"
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return "a"
    raise ShapeError(op, f"incompatible shapes {sa} and {sb}")


def _unbias(g, kind, which):
    return g.sum(axis=0) if kind == which else g


def add(a, b):
    a, b, tape = _pair(a, b)
    kind = _broadcast_kind("add", a.shape, b.shape)
    return tape._record(
        a.value + b.value, "add", (a, b),
        lambda g: (_unbias(g, kind, "a"), _unbias(g, kind, "b")),
    )


def sub(a, b):
    a, b, tape = _pair(a, b)
    kind = _broadcast_kind("sub", a.shape, b.shape)
    return tape._record(
        a.value - b.value, "sub", (a, b),
        lambda g: (_unbias(g, kind, "a"), -_unbias(g, kind, "b")),
    )


def mul(a, b):
    """Elementwise product."""
    a, b, tape = _pair(a, b)
    kind = _broadcast_kind("mul", a.shape, b.shape)
    av, bv = a.value, b.value
    return tape._record(
        av * bv, "mul", (a, b),
        lambda g: (_unbias(g * bv, kind, "a"), _unbias(g * av, kind, "b")),
    )


def scale(a, c):
    c = float(c)
    return a.tape._record(a.value * c, "scale", (a,), lambda g: (g * c,))


def matmul(a, b):
    a, b, tape = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", f"cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return tape._record(av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    if a.value.ndim != 2:
        raise ShapeError("transpose", f"expected a 2-d tensor, got {a.shape}")
    return a.tape._record(a.value.T.copy(), "transpose", (a,), lambda g: (g.T,))


def tanh(a):
    y = np.tanh(a.value)
    return a.tape._record(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a):
    y = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return a.tape._record(y, "sigmoid", (a,), lambda g: (g * y * (1.0 - y),))


def concat(tensors, axis=0):
    tape = tensors[0].tape
    tensors = tuple(_lift(t, tape) for t in tensors)
    try:
        value = np.concatenate([t.value for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError("concat", str(exc)) from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def vjp(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return tape._record(value, "concat", tensors, vjp)


def take(a, index):
    """Basic numpy indexing / slicing."""
    try:
        value = a.value[index]
    except (IndexError, TypeError) as exc:
        raise ShapeError("slice", str(exc)) from None
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[index] += g
        return (full,)

    return a.tape._record(np.array(value), "slice", (a,), vjp)


def sum(a):  # noqa: A001 - mirrors numpy naming
    shape = a.shape
    return a.tape._record(a.value.sum(), "sum", (a,), lambda g: (np.full(shape, g),))


def sqnorm(a):
    """Sum of squared entries."""
    v = a.value
    return a.tape._record(np.dot(v.ravel(), v.ravel()), "sqnorm", (a,), lambda g: (2.0 * g * v,))


def lstm_recurrence(gx, Whh, reverse=False):
    """Fused LSTM recurrence over precomputed gate inputs ``gx`` (T x 4h).

    Returns the hidden sequence (T x h). Runs on the compiled kernel when
    available; the backward pass is truncation-free BPTT.
    """
    gx, Whh, tape = _pair(gx, Whh)
    T, h4 = gx.shape
    if h4 % 4 or Whh.shape != (h4, h4 // 4):
        raise ShapeError("lstm", f"gate inputs {gx.shape} do not match recurrent weights {Whh.shape}")
    H, C, G = kernels.lstm_recurrence_forward(gx.value, Whh.value, reverse)
    h = h4 // 4

    def vjp(g):
        dZ = kernels.lstm_recurrence_backward(g, G, C, Whh.value, reverse)
        Hprev = np.zeros_like(H)
        if reverse:
            Hprev[:-1] = H[1:]
        else:
            Hprev[1:] = H[:-1]
        return dZ, dZ.T @ Hprev

    out = tape._record(H, "lstm", (gx, Whh), vjp)
    assert out.shape == (T, h)
    return out


def backward(tape, loss):
    """Reverse-mode gradients of the scalar ``loss`` w.r.t. every tape parameter.

    Parameters that do not influence ``loss`` are absent from the result.
    """
    if not isinstance(loss, Tensor) or loss.value.size != 1:
        raise InvalidInputError("backward needs a scalar loss tensor")
    if loss.tape is not tape:
        raise InvalidInputError("loss was not recorded on this tape")
    if not loss.requires_grad:
        return {}
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    out = {}
    for name, p in tape.params.items():
        g = grads.get(id(p))
        if g is not None:
            out[name] = np.asarray(g, dtype=np.float64).reshape(p.shape)
    return out
