# tensors/tensor.py
"""
Dense float64 tensors with tape-based reverse-mode differentiation.

A ``Tape`` is activated with ``with Tape() as tape:``; every operation whose
inputs require gradients is appended to it in execution order, so the list
is topologically sorted by construction. ``backward`` walks it once in
reverse. Outside an active tape (or inside ``no_grad``) operations run as
plain numpy and record nothing.
"""
import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from core.exceptions import DimensionError, StateError, ValidationError

PROB_FLOOR = 1e-12

_state = threading.local()


def _stack():
    if not hasattr(_state, 'tapes'):
        _state.tapes = []
    return _state.tapes


def current_tape():
    stack = _stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations. Single owner, not shared."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().pop()
        return False

    def record(self, node):
        self.nodes.append(node)


@contextmanager
def no_grad():
    """Run forward code without recording anything."""
    _stack().append(None)
    try:
        yield
    finally:
        _stack().pop()


class Tensor:
    __slots__ = ('data', 'requires_grad', 'grad', '_parents', '_backward', 'name')

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def _wrap(cls, array):
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = False
        out.grad = None
        out._parents = ()
        out._backward = None
        out.name = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor._wrap(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self):
        return transpose(self)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def _result(array, parents, backward):
    tape = current_tape()
    out = Tensor._wrap(array)
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        tape.record(out)
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -------------------------------------------------------------------
# ELEMENTWISE
# -------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,))


def log(a, floor=PROB_FLOOR):
    """Natural log of ``max(a, floor)``; gradient is zero where clamped."""
    a = as_tensor(a)
    safe = np.maximum(a.data, floor)
    return _result(np.log(safe), (a,), lambda g: (np.where(a.data >= floor, g / safe, 0.0),))


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),))


# -------------------------------------------------------------------
# LINEAR ALGEBRA & SHAPE
# -------------------------------------------------------------------

def matmul(a, b):
    """``a @ b`` for a of shape (..., k) and a matrix b of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")

    def backward(g):
        grad_a = g @ b.data.T
        grad_b = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, b.shape[1])
        return grad_a, grad_b

    return _result(a.data @ b.data, (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    return _result(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),))


def take(a, index):
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _result(a.data[index], (a,), backward)


def concat(tensors, axis=-1):
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors, axis=0):
    tensors = tuple(as_tensor(t) for t in tensors)

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# -------------------------------------------------------------------
# REDUCTIONS
# -------------------------------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -------------------------------------------------------------------
# PROBABILITY
# -------------------------------------------------------------------

def softmax(a, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    a = as_tensor(a)
    if a.data.size == 0 or a.shape[axis] == 0:
        raise ValidationError("softmax of an empty vector is undefined")
    shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _result(out, (a,), backward)


def cross_entropy(probs, labels, floor=PROB_FLOOR):
    """
    Mean of ``-ln(max(probs[i, labels[i]], floor))``.

    ``probs`` is a single distribution (C,) with an integer label, or a
    batch (B, C) with a length-B label array.
    """
    probs = as_tensor(probs)
    single = probs.ndim == 1
    matrix = probs.data[None, :] if single else probs.data
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    classes = matrix.shape[1]
    if labels.shape[0] != matrix.shape[0]:
        raise DimensionError(f"{labels.shape[0]} labels for {matrix.shape[0]} distributions")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise IndexError(f"label out of range for {classes} classes: {labels.tolist()}")
    rows = np.arange(matrix.shape[0])
    picked = matrix[rows, labels]
    safe = np.maximum(picked, floor)
    count = matrix.shape[0]

    def backward(g):
        grad = np.zeros_like(matrix)
        grad[rows, labels] = np.where(picked >= floor, -g / (count * safe), 0.0)
        return (grad[0] if single else grad,)

    return _result(np.asarray(np.mean(-np.log(safe))), (probs,), backward)


def binary_cross_entropy(probs, targets, floor=PROB_FLOOR):
    """Mean binary cross-entropy of probabilities against 0/1 targets."""
    probs = as_tensor(probs)
    y = np.broadcast_to(np.asarray(targets, dtype=np.float64), probs.shape)
    p_safe = np.maximum(probs.data, floor)
    q_safe = np.maximum(1.0 - probs.data, floor)
    count = probs.data.size
    value = -np.mean(y * np.log(p_safe) + (1.0 - y) * np.log(q_safe))

    def backward(g):
        d_pos = np.where(probs.data >= floor, y / p_safe, 0.0)
        d_neg = np.where(1.0 - probs.data >= floor, (1.0 - y) / q_safe, 0.0)
        return (-g * (d_pos - d_neg) / count,)

    return _result(np.asarray(value), (probs,), backward)


# -------------------------------------------------------------------
# BACKWARD
# -------------------------------------------------------------------

def backward(tape, loss, params=None):
    """
    Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf reachable from
    ``loss``. When ``params`` is given, return their gradients in order,
    with zeros for parameters the loss does not depend on.
    """
    if tape is None or len(tape) == 0:
        raise StateError("backward called before any forward operation was recorded")
    if loss.data.size != 1:
        raise DimensionError(f"loss must be a scalar, got shape {list(loss.shape)}")

    pending = {id(loss): np.ones_like(loss.data)}
    if loss.is_leaf and loss.requires_grad:
        loss.grad = pending.pop(id(loss)) if loss.grad is None else loss.grad + 1.0

    for node in reversed(tape.nodes):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = _unbroadcast(parent_grad, parent.shape)
            if parent.is_leaf:
                parent.grad = parent_grad.copy() if parent.grad is None else parent.grad + parent_grad
            else:
                key = id(parent)
                pending[key] = pending[key] + parent_grad if key in pending else parent_grad

    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


def zero_grad(params):
    for param in params:
        param.grad = None


def clip_grad_norm(grads, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(np.sum([np.sum(g * g) for g in grads])))
    if max_norm is None or total <= max_norm or total == 0.0:
        return list(grads), total
    scale = max_norm / total
    return [g * scale for g in grads], total
