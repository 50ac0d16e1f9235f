"""Reverse-mode automatic differentiation over dense NumPy arrays.

A Tensor wraps a float64 ndarray plus an optional backward closure recorded
during the forward pass. Compute happens in float64; the 32-bit storage width
of the file formats is applied at the serialization boundary (see checkpoint
and dataio). The op set is exactly what a small prefix-conditioned transformer
needs: linear maps, attention pieces, layer norm, GELU, softmax cross-entropy.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import backend
from .errors import (
    EmptyLossError,
    GraphError,
    InvalidValueError,
    ShapeError,
    VocabularyError,
)

_grad_enabled = True

# When true, every op output is scanned for NaN/Inf (slow; used by tests).
CHECK_FINITE = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / finite differences)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = np.ascontiguousarray(arr) if arr.ndim else arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph -------------------------------------------------------------

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf's .grad."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.data.shape}")
        if self._backward_fn is None:
            raise GraphError("backward called without a recorded forward graph")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __matmul__(self, other):
        return matmul(self, other)


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data, dtype=np.float64)
    out.data = np.ascontiguousarray(arr) if arr.ndim else arr
    out.grad = None
    out._parents = ()
    out._backward_fn = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    if CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise InvalidValueError("non-finite value produced by an op")
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        # copy: g may be a view or an array shared with another parent
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise / linear algebra -------------------------------------------


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bwd)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bwd)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    if a.ndim != b.ndim or a.data.shape[:-2] != b.data.shape[:-2]:
        raise ShapeError(f"matmul batch dims must match exactly: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _node(data, (a, b), bwd)


def reshape(a, shape):
    data = a.data.reshape(shape)

    def bwd(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _node(data, (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    data = np.transpose(a.data, axes)

    def bwd(g):
        _accumulate(a, np.transpose(g, inverse))

    return _node(data, (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    base = list(tensors[0].data.shape)
    for t in tensors[1:]:
        other = list(t.data.shape)
        other[axis] = base[axis]
        if other != base:
            raise ShapeError(f"concat shapes differ off-axis: {[t.shape for t in tensors]}")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        start = 0
        for t, size in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + size)
            _accumulate(t, g[tuple(sl)])
            start += size

    return _node(data, tuple(tensors), bwd)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along `axis`."""
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for {a.shape}")
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    data = a.data[sl].copy()

    def bwd(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accumulate(a, full)

    return _node(data, (a,), bwd)


def mean(a, axis=0):
    data = a.data.mean(axis=axis)
    n = a.data.shape[axis]

    def bwd(g):
        _accumulate(a, np.repeat(np.expand_dims(g / n, axis), n, axis=axis))

    return _node(data, (a,), bwd)


def total(a):
    """Sum of all entries as a scalar node."""
    data = np.float64(a.data.sum())

    def bwd(g):
        _accumulate(a, np.full_like(a.data, float(g)))

    return _node(data, (a,), bwd)


# -- neural-net ops ----------------------------------------------------------


def embedding(table, ids):
    """Row gather: out[i] = table[ids[i]]. Scatter-add on backward."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError(f"embedding ids must be 1-d, got shape {ids.shape}")
    v = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        raise VocabularyError(f"token id out of range [0, {v})")
    data = table.data[ids] if ids.size else np.zeros((0, table.data.shape[1]))

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        _accumulate(table, gt)

    return _node(data, (table,), bwd)


def gelu(a):
    if not np.all(np.isfinite(a.data)):
        raise InvalidValueError("gelu requires finite input")
    data = backend.gelu_fwd(a.data)

    def bwd(g):
        _accumulate(a, backend.gelu_bwd(a.data, g))

    return _node(data, (a,), bwd)


def layer_norm(x, gain, bias, eps=1e-5):
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects (n, d), got {x.shape}")
    y, mu, rstd = backend.layer_norm_fwd(x.data, gain.data, bias.data, eps)

    def bwd(g):
        gx, ggain, gbias = backend.layer_norm_bwd(x.data, gain.data, mu, rstd, g)
        _accumulate(x, gx)
        _accumulate(gain, ggain)
        _accumulate(bias, gbias)

    return _node(y, (x, gain, bias), bwd)


def softmax(scores, causal=False):
    """Row softmax over the last axis of a (b, t, s) tensor, optionally causal."""
    if scores.ndim != 3:
        raise ShapeError(f"softmax expects (b, t, s), got {scores.shape}")
    probs = backend.softmax_fwd(scores.data, causal)

    def bwd(g):
        _accumulate(scores, backend.softmax_bwd(probs, g))

    return _node(probs, (scores,), bwd)


def softmax_cross_entropy(logits, targets, mask=None):
    """Mean negative log-likelihood of `targets` over masked rows.

    logits: (n, v) Tensor; targets: n int ids; mask: n bools (None = all rows).
    """
    if logits.ndim != 2:
        raise ShapeError(f"cross entropy expects (n, v) logits, got {logits.shape}")
    n, v = logits.data.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ShapeError(f"targets shape {targets.shape} does not match {n} rows")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise VocabularyError(f"target id out of range [0, {v})")
    if mask is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (n,):
            raise ShapeError(f"mask shape {mask.shape} does not match {n} rows")
    if not mask.any():
        raise EmptyLossError("cross entropy over an all-false mask")
    loss, probs = backend.cross_entropy_fwd(logits.data, targets, mask)

    def bwd(g):
        _accumulate(logits, backend.cross_entropy_bwd(probs, targets, mask, float(g)))

    return _node(np.float64(loss), (logits,), bwd)


def log_softmax_row(logits_row):
    """Numerically stable log-softmax of a 1-d float64 array (plain numpy helper)."""
    m = logits_row.max()
    z = np.exp(logits_row - m).sum()
    return logits_row - m - np.log(z)
