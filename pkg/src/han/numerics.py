"""Dense 2-D float64 operations with tape-based reverse-mode differentiation.

Every value flowing through the model is a :class:`Node` wrapping a 2-D
``float64`` array.  Operations append a record to the :class:`Tape` shared by
their inputs; :func:`backward` walks the records in reverse and accumulates
gradients.  Parameters live in a :class:`ParamStore` and are bound to a tape
with :meth:`Tape.param`.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.special import expit

__all__ = [
    "NumericsError", "ExpOverflowError", "DimensionError",
    "Node", "Tape", "ParamStore", "backward",
    "matmul", "transpose", "add", "sub", "hadamard", "scale", "row_scale",
    "activation", "softmax_rows", "layer_norm", "concat_cols", "concat_rows",
    "slice_cols", "take_rows", "reshape", "max_rows", "mean_rows", "sum_all",
    "cross_entropy", "xavier_uniform", "ACTIVATIONS",
]

ACTIVATIONS = ("relu", "elu", "exp", "sigmoid", "tanh")
EXP_LIMIT = 700.0
CHECKPOINT_FORMAT = "han-params"
CHECKPOINT_VERSION = 1


class NumericsError(ArithmeticError):
    """A non-finite value appeared at an operation boundary."""


class ExpOverflowError(NumericsError, OverflowError):
    pass


class DimensionError(ValueError):
    def __init__(self, op, *shapes):
        shown = ", ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shown}")
        self.op = op
        self.shapes = shapes


class Node:
    """A 2-D array on a tape, with an optional accumulated gradient."""

    __slots__ = ("value", "grad", "tape", "requires_grad", "name")

    def __init__(self, value, tape, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"<Node{tag} shape={self.shape}>"


def _as_matrix(value):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError("matrix", arr.shape)
    return arr




def _check_finite(op, value):
    if not np.isfinite(value).all():
        raise NumericsError(f"{op}: non-finite value produced")


class Tape:
    """Ordered record of primitive operations.

    With ``grad=False`` nothing is recorded and the tape only serves as a
    factory for nodes, which keeps inference cheap.
    """

    def __init__(self, grad=True):
        self.grad_enabled = grad
        self.records = []
        self.store = None
        self._params = {}

    def constant(self, value, name=None):
        arr = _as_matrix(value)
        _check_finite("constant", arr)
        return Node(arr, self, False, name)

    def param(self, store, name):
        """Bind parameter ``name`` of ``store``; repeated calls share one node."""
        if self.store is None:
            self.store = store
        elif self.store is not store:
            raise ValueError("a tape can only bind parameters from one store")
        node = self._params.get(name)
        if node is None:
            node = Node(store.value(name), self, self.grad_enabled, name)
            self._params[name] = node
        return node

    def emit(self, op, value, parents, vjp):
        """Create the output node of ``op`` and record how to pull back its gradient.

        ``vjp`` maps the output gradient to a tuple with one entry per parent
        (``None`` where no gradient flows).
        """
        _check_finite(op, value)
        needs = self.grad_enabled and any(p.requires_grad for p in parents)
        out = Node(value, self, needs)
        if needs:
            self.records.append((out, parents, vjp))
        return out

    def backward(self, loss):
        backward(self, loss)


def backward(tape, loss):
    """Populate gradients for every parameter bound to ``tape``.

    Parameters of the tape's store that the loss does not reach get zero
    gradients.
    """
    if loss.shape != (1, 1):
        raise DimensionError("backward: loss must be 1x1", loss.shape)
    if loss.tape is not tape:
        raise ValueError("loss was not produced on this tape")
    for out, _, _ in tape.records:
        out.grad = None
    for node in tape._params.values():
        node.grad = None
    loss.grad = np.ones((1, 1))
    for out, parents, vjp in reversed(tape.records):
        if out.grad is None:
            continue
        for parent, g in zip(parents, vjp(out.grad)):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64)
            else:
                parent.grad = parent.grad + g
    if tape.store is not None:
        tape.store.zero_grad()
        for name, node in tape._params.items():
            if node.grad is not None:
                tape.store.grads[name] += node.grad


def _tape_of(*nodes):
    for n in nodes:
        if isinstance(n, Node):
            return n.tape
    raise TypeError("at least one argument must be a Node")


def _lift(tape, x):
    return x if isinstance(x, Node) else tape.constant(x)


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)
    av, bv = a.value, b.value
    return tape.emit("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a):
    return a.tape.emit("transpose", a.value.T.copy(), (a,), lambda g: (g.T,))


def _broadcast_grad(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and shape[1] == g.shape[1]:
        return g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and shape[0] == g.shape[0]:
        return g.sum(axis=1, keepdims=True)
    return np.full(shape, g.sum())


def _broadcastable(a, b):
    ra, ca = a
    rb, cb = b
    return (rb in (ra, 1)) and (cb in (ca, 1))


def add(a, b):
    """Sum of ``a`` and ``b``; ``b`` may be a 1xc row or rx1 column broadcast over ``a``."""
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if not _broadcastable(a.shape, b.shape):
        raise DimensionError("add", a.shape, b.shape)
    bshape = b.shape
    return tape.emit("add", a.value + b.value, (a, b),
                     lambda g: (g, _broadcast_grad(g, bshape)))


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if not _broadcastable(a.shape, b.shape):
        raise DimensionError("sub", a.shape, b.shape)
    bshape = b.shape
    return tape.emit("sub", a.value - b.value, (a, b),
                     lambda g: (g, -_broadcast_grad(g, bshape)))


def hadamard(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(tape, a), _lift(tape, b)
    if a.shape != b.shape:
        raise DimensionError("hadamard", a.shape, b.shape)
    av, bv = a.value, b.value
    return tape.emit("hadamard", av * bv, (a, b), lambda g: (g * bv, g * av))


def row_scale(x, s):
    """Multiply row i of ``x`` (n x d) by the scalar ``s[i, 0]`` (s is n x 1)."""
    tape = _tape_of(x, s)
    x, s = _lift(tape, x), _lift(tape, s)
    if s.shape != (x.shape[0], 1):
        raise DimensionError("row_scale", x.shape, s.shape)
    xv, sv = x.value, s.value
    return tape.emit("row_scale", xv * sv, (x, s),
                     lambda g: (g * sv, (g * xv).sum(axis=1, keepdims=True)))


def scale(x, c):
    c = float(c)
    return x.tape.emit("scale", x.value * c, (x,), lambda g: (g * c,))


def activation(x, kind):
    """Element-wise nonlinearity; ``kind`` is one of :data:`ACTIVATIONS`.

    ELU uses alpha = 1.  ``exp`` refuses inputs above 700 instead of
    returning infinity.
    """
    v = x.value
    if kind == "relu":
        mask = v > 0
        y = np.where(mask, v, 0.0)
        return x.tape.emit("relu", y, (x,), lambda g: (g * mask,))
    if kind == "elu":
        pos = v > 0
        y = np.where(pos, v, np.expm1(np.minimum(v, 0.0)))
        return x.tape.emit("elu", y, (x,), lambda g: (g * np.where(pos, 1.0, y + 1.0),))
    if kind == "exp":
        if v.size and v.max() > EXP_LIMIT:
            raise ExpOverflowError(f"exp: input {v.max():.6g} exceeds {EXP_LIMIT}")
        y = np.exp(v)
        return x.tape.emit("exp", y, (x,), lambda g: (g * y,))
    if kind == "sigmoid":
        y = expit(v)
        return x.tape.emit("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))
    if kind == "tanh":
        y = np.tanh(v)
        return x.tape.emit("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def softmax_rows(x):
    v = x.value
    e = np.exp(v - v.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return x.tape.emit("softmax_rows", y, (x,), vjp)


def layer_norm(x, gain, bias, eps=1e-5):
    """Per-row standardisation followed by ``gain * xhat + bias`` (both 1 x cols)."""
    tape = _tape_of(x, gain, bias)
    x, gain, bias = (_lift(tape, t) for t in (x, gain, bias))
    cols = x.shape[1]
    if gain.shape != (1, cols) or bias.shape != (1, cols):
        raise DimensionError("layer_norm", x.shape, gain.shape, bias.shape)
    if eps <= 0:
        raise ValueError("eps must be positive")
    v = x.value
    mu = v.mean(axis=1, keepdims=True)
    centered = v - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std
    gv = gain.value

    def vjp(g):
        dxhat = g * gv
        dx = inv_std * (dxhat - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return dx, (g * xhat).sum(axis=0, keepdims=True), g.sum(axis=0, keepdims=True)

    return tape.emit("layer_norm", xhat * gv + bias.value, (x, gain, bias), vjp)


def concat_cols(*parts):
    tape = _tape_of(*parts)
    parts = tuple(_lift(tape, p) for p in parts)
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise DimensionError("concat_cols", *(p.shape for p in parts))
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def vjp(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(edges[:-1], edges[1:]))

    return tape.emit("concat_cols", np.hstack([p.value for p in parts]), parts, vjp)


def concat_rows(*parts):
    tape = _tape_of(*parts)
    parts = tuple(_lift(tape, p) for p in parts)
    cols = parts[0].shape[1]
    if any(p.shape[1] != cols for p in parts):
        raise DimensionError("concat_rows", *(p.shape for p in parts))
    edges = np.cumsum([0] + [p.shape[0] for p in parts])

    def vjp(g):
        return tuple(g[lo:hi] for lo, hi in zip(edges[:-1], edges[1:]))

    return tape.emit("concat_rows", np.vstack([p.value for p in parts]), parts, vjp)


def slice_cols(x, start, stop):
    rows, cols = x.shape
    if not 0 <= start < stop <= cols:
        raise DimensionError(f"slice_cols[{start}:{stop}]", x.shape)

    def vjp(g):
        full = np.zeros((rows, cols))
        full[:, start:stop] = g
        return (full,)

    return x.tape.emit("slice_cols", x.value[:, start:stop].copy(), (x,), vjp)


def take_rows(table, index):
    """Gather rows of ``table``; repeated indices accumulate gradient."""
    index = np.asarray(index, dtype=np.intp)
    if index.ndim != 1:
        raise DimensionError("take_rows index", index.shape)
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise IndexError(f"take_rows: index out of range for {table.shape[0]} rows")
    shape = table.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return table.tape.emit("take_rows", table.value[index], (table,), vjp)


def reshape(x, rows, cols):
    if rows * cols != x.value.size:
        raise DimensionError(f"reshape to ({rows}, {cols})", x.shape)
    shape = x.shape
    return x.tape.emit("reshape", x.value.reshape(rows, cols).copy(), (x,),
                       lambda g: (g.reshape(shape),))


def max_rows(x):
    """Column-wise max over rows (1 x cols); ties send gradient to the first row."""
    v = x.value
    arg = v.argmax(axis=0)
    cols = np.arange(v.shape[1])

    def vjp(g):
        full = np.zeros(v.shape)
        full[arg, cols] = g[0]
        return (full,)

    return x.tape.emit("max_rows", v[arg, cols][None, :], (x,), vjp)


def mean_rows(x):
    n = x.shape[0]
    return x.tape.emit("mean_rows", x.value.mean(axis=0, keepdims=True), (x,),
                       lambda g: (np.repeat(g / n, n, axis=0),))


def sum_all(x):
    shape = x.shape
    return x.tape.emit("sum_all", np.array([[x.value.sum()]]), (x,),
                       lambda g: (np.full(shape, g[0, 0]),))


def cross_entropy(logits, target):
    """Negative log-softmax probability of class ``target`` for a 1 x k logit row."""
    if logits.shape[0] != 1:
        raise DimensionError("cross_entropy", logits.shape)
    k = logits.shape[1]
    if not 0 <= target < k:
        raise IndexError(f"cross_entropy: target {target} out of range for {k} classes")
    v = logits.value[0]
    m = v.max()
    # overflow here surfaces as a non-finite loss, which emit() reports
    with np.errstate(over="ignore", invalid="ignore"):
        logz = m + math.log(np.exp(v - m).sum())
        probs = np.exp(v - logz)
        loss = logz - v[target]

    def vjp(g):
        d = probs.copy()
        d[target] -= 1.0
        return (g[0, 0] * d[None, :],)

    return logits.tape.emit("cross_entropy", np.array([[loss]]), (logits,), vjp)


def xavier_uniform(rng, rows, cols):
    limit = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class ParamStore:
    """Named trainable matrices with matching gradient buffers."""

    def __init__(self):
        self.values = {}
        self.grads = {}

    def add(self, name, value):
        if name in self.values:
            raise KeyError(f"parameter {name!r} already exists")
        arr = _as_matrix(value)
        _check_finite(f"param {name}", arr)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def value(self, name):
        return self.values[name]

    def set(self, name, value):
        arr = _as_matrix(value)
        if arr.shape != self.values[name].shape:
            raise DimensionError(f"set {name}", self.values[name].shape, arr.shape)
        self.values[name] = arr

    def names(self):
        return list(self.values)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def __contains__(self, name):
        return name in self.values

    def __len__(self):
        return len(self.values)

    def size(self):
        return sum(v.size for v in self.values.values())

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "params": {
                name: {"shape": list(v.shape), "values": v.ravel().tolist()}
                for name, v in sorted(self.values.items())
            },
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"not a parameter checkpoint (format={doc.get('format')!r})")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        store = cls()
        for name, entry in doc["params"].items():
            rows, cols = entry["shape"]
            vals = entry["values"]
            if len(vals) != rows * cols:
                raise ValueError(f"{name}: {len(vals)} values for shape {rows}x{cols}")
            store.add(name, np.array(vals, dtype=np.float64).reshape(rows, cols))
        return store

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))
