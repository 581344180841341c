"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for transformer training: a Tensor wrapping an
ndarray, a handful of ops, and an iterative topological backward pass.
Graphs are built per step and discarded; nothing here is thread safe.

Gradient accumulation order is fixed by graph construction order, so a
given program produces bit-identical gradients run to run.
"""

import contextlib

import numpy as np

from . import kernels

GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global GRAD_ENABLED
    prev = GRAD_ENABLED
    GRAD_ENABLED = False
    try:
        yield
    finally:
        GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar; scalars and ndarrays are wrapped as constants
    def __add__(self, other):
        return add(self, _const(other, self))

    def __radd__(self, other):
        return add(_const(other, self), self)

    def __sub__(self, other):
        return sub(self, _const(other, self))

    def __rsub__(self, other):
        return sub(_const(other, self), self)

    def __mul__(self, other):
        return mul(self, _const(other, self))

    def __rmul__(self, other):
        return mul(_const(other, self), self)

    def __neg__(self):
        return self * (-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _coerce(a, b):
    """Wrap whichever of a, b is not a Tensor as a constant in the other's dtype."""
    if not isinstance(a, Tensor):
        a = _const(a, b)
    elif not isinstance(b, Tensor):
        b = _const(b, a)
    return a, b


def _make(data, parents, backward):
    """Build an op output; drops the graph when no parent needs gradients."""
    out = Tensor(data)
    if GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _coerce(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = _coerce(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accum(-_unbroadcast(g, b.data.shape))

    return _make(a.data - b.data, (a, b), bwd)


def mul(a, b):
    a, b = _coerce(a, b)

    def bwd(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), bwd)


def matmul(a, b):
    """Matrix product, batched over leading axes per numpy semantics."""

    def bwd(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accum(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accum(_unbroadcast(gb, b.data.shape))

    return _make(np.matmul(a.data, b.data), (a, b), bwd)


def reshape(a, shape):
    def bwd(g):
        a._accum(g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        a._accum(np.ascontiguousarray(g.transpose(inv)))

    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), bwd)


def broadcast_to(a, shape):
    def bwd(g):
        a._accum(_unbroadcast(g, a.data.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def concat(tensors, axis):
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd)


def slice_axis(a, axis, start, stop):
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bwd(g):
        acc = np.zeros_like(a.data)
        acc[sl] = g
        a._accum(acc)

    return _make(np.ascontiguousarray(a.data[sl]), (a,), bwd)


def take(a, indices, axis):
    """Gather rows along `axis` with a shared 1-D index vector."""
    idx = np.asarray(indices, dtype=np.int64)
    sel = tuple([slice(None)] * axis + [idx])

    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, sel, g)
        a._accum(acc)

    return _make(np.ascontiguousarray(np.take(a.data, idx, axis=axis)), (a,), bwd)


def sum_all(a):
    def bwd(g):
        a._accum(np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True))

    return _make(a.data.sum(dtype=a.data.dtype), (a,), bwd)


def mean_all(a):
    n = a.data.size

    def bwd(g):
        a._accum(np.full_like(a.data, g / n))

    return _make(a.data.mean(dtype=a.data.dtype), (a,), bwd)


def sum_axis(a, axis):
    def bwd(g):
        a._accum(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).astype(a.data.dtype, copy=True))

    return _make(a.data.sum(axis=axis), (a,), bwd)


def mean_axis(a, axis):
    n = a.data.shape[axis]

    def bwd(g):
        a._accum(np.broadcast_to(np.expand_dims(g / n, axis), a.data.shape).astype(a.data.dtype, copy=True))

    return _make(a.data.mean(axis=axis), (a,), bwd)


def gelu(a):
    def bwd(g):
        a._accum(kernels.gelu_bwd(a.data, g))

    return _make(kernels.gelu_fwd(a.data), (a,), bwd)


def softmax(a):
    """Softmax over the last axis."""
    y = kernels.softmax_fwd(a.data)

    def bwd(g):
        a._accum(kernels.softmax_bwd(y, g))

    return _make(y, (a,), bwd)


def log_softmax(a):
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def bwd(g):
        a._accum(g - p * g.sum(axis=-1, keepdims=True))

    return _make(y, (a,), bwd)


def layernorm(a, gamma, beta, eps=1e-6):
    """Layer normalization over the last axis with learned scale and shift."""
    y, mean, rstd = kernels.layernorm_fwd(a.data, gamma.data, beta.data, eps)

    def bwd(g):
        dx, dg, db = kernels.layernorm_bwd(a.data, gamma.data, mean, rstd, g)
        if a.requires_grad:
            a._accum(dx)
        if gamma.requires_grad:
            gamma._accum(dg)
        if beta.requires_grad:
            beta._accum(db)

    return _make(y, (a, gamma, beta), bwd)
