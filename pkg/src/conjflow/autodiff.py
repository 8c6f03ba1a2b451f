"""Reverse-mode automatic differentiation on dense float64 tensors.

Small tape-based engine sized for models up to a few tens of thousands of
parameters.  Operations compute forward values with numpy and, when a tape
is active and an input is tracked, append a backward rule to the tape.
Evaluation with no active tape is plain numpy (no recording overhead).
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class ContractViolation(RuntimeError):
    """An operation was called outside its contract (e.g. non-scalar loss)."""


class DivergedTrainingError(RuntimeError):
    """Optimization produced a non-finite gradient."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite gradient at optimizer step {step}")


class Tensor:
    """Dense float64 array with an optional slot on the active tape.

    Tensors with ``requires_grad=False`` are plain immutable values;
    tracked tensors are bound to exactly one tape (the most recent one
    they participated in).
    """

    __slots__ = ("values", "requires_grad", "node_id", "tape")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.node_id = None
        self.tape = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars go through the scalar-mul / constant paths
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return smul(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return smul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def tensor(values):
    """Constant (untracked) tensor."""
    return Tensor(values)


def parameter(values):
    """Trainable leaf tensor."""
    return Tensor(np.array(values, dtype=np.float64), requires_grad=True)


class Tape:
    """Ordered record of operations, one per forward op that touched a
    tracked tensor.  Topological by construction (ops append in forward
    order).  Use as a context manager around one training step."""

    def __init__(self):
        self.nodes = []  # (out_id, input_ids, vjp) ; leaves are not nodes
        self.leaf_shapes = {}  # node_id -> shape
        self._next_id = 0
        self._prev = None

    def _new_id(self):
        nid = self._next_id
        self._next_id += 1
        return nid

    def register_leaf(self, t):
        t.tape = self
        t.node_id = self._new_id()
        self.leaf_shapes[t.node_id] = t.values.shape

    def __enter__(self):
        global _ACTIVE
        self._prev = _ACTIVE
        _ACTIVE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE
        _ACTIVE = self._prev
        self._prev = None
        return False


_ACTIVE: Tape | None = None


def active_tape():
    return _ACTIVE


def _bind(t, tape):
    if t.tape is not tape:
        tape.register_leaf(t)
    return t.node_id


# ---------------------------------------------------------------------------
# op kinds
# ---------------------------------------------------------------------------

def _unbroadcast(grad, shape):
    """Sum a gradient down to the shape of the broadcast operand."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _require_broadcastable(kind, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} do not conform")


def _op_add(a, b):
    _require_broadcastable("add", a, b)
    out = a.values + b.values
    ash, bsh = a.values.shape, b.values.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return out, vjp


def _op_sub(a, b):
    _require_broadcastable("sub", a, b)
    out = a.values - b.values
    ash, bsh = a.values.shape, b.values.shape

    def vjp(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return out, vjp


def _op_mul(a, b):
    _require_broadcastable("mul", a, b)
    av, bv = a.values, b.values
    out = av * bv

    def vjp(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return out, vjp


def _op_smul(a, c):
    out = a.values * c

    def vjp(g):
        return (g * c,)

    return out, vjp


def _op_matmul(a, b):
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim not in (1, 2):
        raise DimensionError(f"matmul: unsupported ranks {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: inner extents differ, {av.shape} @ {bv.shape}")
    out = av @ bv

    if bv.ndim == 2:
        def vjp(g):
            return g @ bv.T, av.T @ g
    else:
        def vjp(g):
            return np.outer(g, bv), av.T @ g

    return out, vjp


def _op_tanh(a):
    out = np.tanh(a.values)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return out, vjp


def _op_exp(a):
    out = np.exp(a.values)

    def vjp(g):
        return (g * out,)

    return out, vjp


def _op_power(a, exponent):
    av = a.values
    out = av ** exponent

    def vjp(g):
        return (g * exponent * av ** (exponent - 1.0),)

    return out, vjp


def _op_sum(a):
    av = a.values
    out = np.asarray(av.sum())

    def vjp(g):
        return (np.full(av.shape, float(g)),)

    return out, vjp


def _op_mean(a):
    av = a.values
    out = np.asarray(av.mean())
    n = av.size

    def vjp(g):
        return (np.full(av.shape, float(g) / n),)

    return out, vjp


def _op_squared_norm(a):
    av = a.values
    out = np.asarray((av * av).sum())

    def vjp(g):
        return (2.0 * float(g) * av,)

    return out, vjp


def _op_concat(*tensors, axis=0):
    vals = [t.values for t in tensors]
    ranks = {v.ndim for v in vals}
    if len(ranks) != 1:
        raise DimensionError(f"concat: mixed ranks {[v.shape for v in vals]}")
    out = np.concatenate(vals, axis=axis)
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return out, vjp


def _op_slice(a, axis, start, stop):
    av = a.values
    if axis >= av.ndim:
        raise DimensionError(f"slice: axis {axis} out of range for shape {av.shape}")
    sel = [slice(None)] * av.ndim
    sel[axis] = slice(start, stop)
    sel = tuple(sel)
    out = av[sel]
    shape = av.shape

    def vjp(g):
        full = np.zeros(shape)
        full[sel] = g
        return (full,)

    return out, vjp


def _op_transpose(a):
    av = a.values
    if av.ndim != 2:
        raise DimensionError(f"transpose: expects a matrix, got shape {av.shape}")
    out = av.T

    def vjp(g):
        return (g.T,)

    return out, vjp


_OPS = {
    "add": _op_add,
    "sub": _op_sub,
    "mul": _op_mul,
    "scalar-mul": _op_smul,
    "matmul": _op_matmul,
    "tanh": _op_tanh,
    "exp": _op_exp,
    "power": _op_power,
    "sum": _op_sum,
    "mean": _op_mean,
    "concat": _op_concat,
    "slice": _op_slice,
    "transpose": _op_transpose,
    "squared-norm": _op_squared_norm,
}


def record(op_kind, *inputs, **params):
    """Apply an op, recording it on the active tape if any input is tracked."""
    try:
        impl = _OPS[op_kind]
    except KeyError:
        raise ContractViolation(f"unknown op kind {op_kind!r}")
    out_values, vjp = impl(*inputs, **params)
    out = Tensor(out_values)

    tape = _ACTIVE
    if tape is not None and any(t.requires_grad for t in inputs):
        in_ids = tuple(_bind(t, tape) if t.requires_grad else None for t in inputs)
        out.requires_grad = True
        out.tape = tape
        out.node_id = tape._new_id()
        tape.nodes.append((out.node_id, in_ids, vjp))
    return out


def add(a, b):
    return record("add", a, b)


def sub(a, b):
    return record("sub", a, b)


def mul(a, b):
    return record("mul", a, b)


def smul(a, c):
    return record("scalar-mul", a, c=float(c))


def matmul(a, b):
    return record("matmul", a, b)


def tanh(a):
    return record("tanh", a)


def exp(a):
    return record("exp", a)


def power(a, exponent):
    return record("power", a, exponent=float(exponent))


def tsum(a):
    return record("sum", a)


def tmean(a):
    return record("mean", a)


def squared_norm(a):
    return record("squared-norm", a)


def concat(tensors, axis=0):
    return record("concat", *tensors, axis=axis)


def tslice(a, axis, start, stop):
    return record("slice", a, axis=axis, start=start, stop=stop)


def transpose(a):
    return record("transpose", a)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss):
    """Gradients of a scalar loss w.r.t. every tracked leaf on its tape.

    Returns a map node_id -> Tensor.  Leaves that do not influence the
    loss get zero gradients.  Each tape node is visited once; a node
    consumed several times accumulates the sum of its contributions.
    """
    if not isinstance(loss, Tensor) or loss.values.size != 1:
        raise ContractViolation("backward expects a scalar loss tensor")
    if loss.tape is None or loss.node_id is None:
        raise ContractViolation("loss is not recorded on a tape")
    tape = loss.tape
    grads = {loss.node_id: np.ones_like(loss.values)}
    for out_id, in_ids, vjp in reversed(tape.nodes):
        g = grads.pop(out_id, None)
        if g is None:
            continue
        for nid, gi in zip(in_ids, vjp(g)):
            if nid is None:
                continue
            acc = grads.get(nid)
            if acc is None:
                grads[nid] = gi.copy() if gi.base is not None or gi is g else gi
            else:
                acc += gi
    out = {}
    for leaf_id, shape in tape.leaf_shapes.items():
        g = grads.get(leaf_id)
        out[leaf_id] = Tensor(g if g is not None else np.zeros(shape))
    return out


def leaf_grads(grad_map, params, tape):
    """Gradient arrays aligned with a parameter list.

    Node ids are per-tape, so a parameter is only looked up when it is
    bound to the given tape; unused parameters get zero gradients.
    """
    out = []
    for p in params:
        g = grad_map.get(p.node_id) if p.tape is tape else None
        if g is None:
            out.append(np.zeros_like(p.values))
        else:
            out.append(g.values)
    return out


# ---------------------------------------------------------------------------
# optimizer and initializers
# ---------------------------------------------------------------------------

class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.99), eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.values) for p in params]
        self.v = [np.zeros_like(p.values) for p in params]


def adam_step(params, grads, state):
    """One in-place Adam update with bias correction.

    ``grads`` is a list of ndarrays aligned with ``params``.  Raises
    DivergedTrainingError if any gradient component is non-finite.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if not np.all(np.isfinite(g)):
            raise DivergedTrainingError(t)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def make_rng(seed, stream=0):
    """Counter-based PRNG (Philox) for reproducible runs.

    Distinct ``stream`` values give independent generators for the same
    seed (model construction vs. data noise, for example).
    """
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


def xavier_init(fan_in, fan_out, rng):
    """Uniform Xavier/Glorot weight matrix of shape (fan_out, fan_in)."""
    if fan_in <= 0 or fan_out <= 0:
        raise DimensionError(f"xavier_init: extents must be positive, got {fan_in}, {fan_out}")
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-bound, bound, size=(fan_out, fan_in)))


def zeros_param(*shape):
    return parameter(np.zeros(shape))
