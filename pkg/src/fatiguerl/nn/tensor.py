"""Dense float64 tensors with tape-based reverse-mode differentiation.

Define-by-run: while a Tape is active, every primitive op appends one node
(output, parents, backward closure) in execution order. Execution order is a
topological order of the compute graph, so replaying the node list backwards
visits each node exactly once in reverse topological order.

Scope is deliberately small: 2-D matmul, elementwise arithmetic with bias-style
broadcasting, a handful of nonlinearities, reductions, concat/slice. No GPU,
no convolutions, no general broadcasting.
"""

import contextlib

import numpy as np
from scipy.special import expit

from ..errors import ContractError, DimensionError

_TAPES: list = []
_GRAD_ENABLED: bool = True


class Tensor:
    """A float64 array plus differentiation bookkeeping.

    `requires_grad` on a leaf marks it trainable; on an intermediate it means
    the value was recorded on the active tape.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; floats/ints are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("out", "parents", "bwd")

    def __init__(self, out, parents, bwd):
        self.out = out
        self.parents = parents
        self.bwd = bwd


class Gradients:
    """Result of a backward sweep: gradient arrays keyed by tensor identity."""

    def __init__(self, table):
        self._table = table

    def get(self, t: Tensor):
        """Gradient array for `t`, or None if the loss does not reach it."""
        return self._table.get(id(t))

    def for_params(self, pset) -> dict:
        """Gradients for the trainable entries of a ParameterSet, by name."""
        out = {}
        for name, tensor in pset.trainable_items():
            g = self._table.get(id(tensor))
            if g is not None:
                out[name] = g
        return out


class Tape:
    """Ordered record of primitive ops for one reverse-mode sweep."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor) -> Gradients:
        """Reverse sweep from `loss`; returns gradients for every reached tensor."""
        if loss.data.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {loss.data.shape}"
            )
        table: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = table.get(id(node.out))
            if g is None:
                continue
            parent_grads = node.bwd(g)
            for parent, pg in zip(node.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                acc = table.get(pid)
                table[pid] = pg if acc is None else acc + pg
        return Gradients(table)


def backward(tape: Tape, loss: Tensor, pset=None):
    """Sweep `tape` from `loss`; with `pset`, return {name: grad} for its trainables."""
    grads = tape.backward(loss)
    if pset is None:
        return grads
    return grads.for_params(pset)


def _active():
    if _TAPES and _GRAD_ENABLED:
        return _TAPES[-1]
    return None


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, bwd):
    tape = _active()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True)
        tape._nodes.append(_Node(out, parents, bwd))
        return out
    return Tensor(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(
            f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}"
        )
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _make(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    ash, bsh = a.data.shape, b.data.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _make(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _make(ad * bd, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _make(ad / bd, (a, b), bwd)


def tanh(t: Tensor) -> Tensor:
    y = np.tanh(t.data)
    return _make(y, (t,), lambda g: (g * (1.0 - y * y),))


def sigmoid(t: Tensor) -> Tensor:
    y = expit(t.data)
    return _make(y, (t,), lambda g: (g * y * (1.0 - y),))


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0.0
    return _make(t.data * mask, (t,), lambda g: (g * mask,))


def softplus(t: Tensor) -> Tensor:
    d = t.data
    return _make(np.logaddexp(0.0, d), (t,), lambda g: (g * expit(d),))


def exp(t: Tensor) -> Tensor:
    y = np.exp(t.data)
    return _make(y, (t,), lambda g: (g * y,))


def log(t: Tensor) -> Tensor:
    d = t.data
    return _make(np.log(d), (t,), lambda g: (g / d,))


def sqrt(t: Tensor) -> Tensor:
    y = np.sqrt(t.data)
    return _make(y, (t,), lambda g: (g / (2.0 * y),))


def square(t: Tensor) -> Tensor:
    d = t.data
    return _make(d * d, (t,), lambda g: (2.0 * d * g,))


def tsum(t: Tensor, axis=None) -> Tensor:
    d = t.data

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, d.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), d.shape).copy(),)

    return _make(d.sum(axis=axis), (t,), bwd)


def tmean(t: Tensor, axis=None) -> Tensor:
    d = t.data
    n = d.size if axis is None else d.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / n, d.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, d.shape).copy(),)

    return _make(d.mean(axis=axis), (t,), bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    widths = [t.data.shape[axis] for t in tensors]
    edges = np.cumsum([0] + widths)

    def bwd(g):
        sl = [slice(None)] * g.ndim
        outs = []
        for i in range(len(widths)):
            sl[axis] = slice(edges[i], edges[i + 1])
            outs.append(g[tuple(sl)])
        return tuple(outs)

    return _make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd
    )


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    d = t.data

    def bwd(g):
        full = np.zeros_like(d)
        full[:, start:stop] = g
        return (full,)

    return _make(d[:, start:stop], (t,), bwd)


def clamp_min(t: Tensor, floor: float) -> Tensor:
    mask = t.data > floor
    return _make(np.maximum(t.data, floor), (t,), lambda g: (g * mask,))


def clamp(t: Tensor, lo: float, hi: float) -> Tensor:
    mask = (t.data > lo) & (t.data < hi)
    return _make(np.clip(t.data, lo, hi), (t,), lambda g: (g * mask,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    return _make(
        np.minimum(a.data, b.data),
        (a, b),
        lambda g: (g * take_a, g * ~take_a),
    )


def assert_finite(t: Tensor, name: str) -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise ContractError(f"non-finite values in {name}")
    return t
