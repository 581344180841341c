"""Parameter store, transformer layers, and sinusoidal position tables."""

import numpy as np

from . import autograd as ag
from . import rng as _rng
from .autograd import Tensor
from .errors import ConfigError


class ParamStore:
    """Named learnable tensors with deterministic, order-dependent init.

    All draws come from one generator seeded by (seed, "init"), so a model
    that registers the same names in the same order reproduces bit-exactly.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._gen = _rng.stream(seed, "init")
        self.params = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.ascontiguousarray(np.asarray(array, dtype=self.dtype)), requires_grad=True)
        self.params[name] = t
        return t

    def normal(self, name: str, shape, std: float) -> Tensor:
        return self.add(name, self._gen.normal(0.0, std, size=shape))

    def xavier(self, name: str, fan_in: int, fan_out: int) -> Tensor:
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return self.normal(name, (fan_in, fan_out), std)

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def ones(self, name: str, shape) -> Tensor:
        return self.add(name, np.ones(shape))

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def size(self) -> int:
        return sum(int(t.data.size) for t in self.params.values())


class Linear:
    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int,
                 zero_init: bool = False):
        if zero_init:
            self.w = store.zeros(name + ".w", (d_in, d_out))
        else:
            self.w = store.xavier(name + ".w", d_in, d_out)
        self.b = store.zeros(name + ".b", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, d: int, eps: float = 1e-6):
        self.g = store.ones(name + ".g", (d,))
        self.b = store.zeros(name + ".b", (d,))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layernorm(x, self.g, self.b, self.eps)


class MultiHeadAttention:
    """Standard full self-attention; no attention masking anywhere."""

    def __init__(self, store: ParamStore, name: str, d: int, heads: int):
        if d % heads:
            raise ConfigError(f"hidden size {d} not divisible by {heads} heads")
        self.d = d
        self.heads = heads
        self.dh = d // heads
        self.qkv = Linear(store, name + ".qkv", d, 3 * d)
        self.out = Linear(store, name + ".out", d, d)

    def __call__(self, x: Tensor) -> Tensor:
        B, n, d = x.data.shape
        h, dh = self.heads, self.dh
        qkv = self.qkv(x)
        parts = []
        for i in range(3):
            p = ag.slice_axis(qkv, 2, i * d, (i + 1) * d)
            p = ag.transpose(ag.reshape(p, (B, n, h, dh)), (0, 2, 1, 3))
            parts.append(p)
        q, k, v = parts
        att = ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        att = ag.softmax(att)
        o = ag.matmul(att, v)
        o = ag.reshape(ag.transpose(o, (0, 2, 1, 3)), (B, n, d))
        return self.out(o)


class Mlp:
    def __init__(self, store: ParamStore, name: str, d: int, hidden: int):
        self.fc1 = Linear(store, name + ".fc1", d, hidden)
        self.fc2 = Linear(store, name + ".fc2", hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class TransformerBlock:
    """Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x)).

    `drop` optionally supplies stochastic-depth scale arrays of shape
    (B, 1, 1), one per residual branch; None means keep both branches.
    """

    def __init__(self, store: ParamStore, name: str, d: int, heads: int, mlp: int):
        self.ln1 = LayerNorm(store, name + ".ln1", d)
        self.attn = MultiHeadAttention(store, name + ".attn", d, heads)
        self.ln2 = LayerNorm(store, name + ".ln2", d)
        self.mlp = Mlp(store, name + ".mlp", d, mlp)

    def __call__(self, x: Tensor, drop=None) -> Tensor:
        h = self.attn(self.ln1(x))
        if drop is not None and drop[0] is not None:
            h = ag.mul(h, Tensor(drop[0].astype(h.data.dtype, copy=False)))
        x = ag.add(x, h)
        h = self.mlp(self.ln2(x))
        if drop is not None and drop[1] is not None:
            h = ag.mul(h, Tensor(drop[1].astype(h.data.dtype, copy=False)))
        return ag.add(x, h)


def _axis_dims(d: int, k: int):
    """Split d into k even parts (first absorbs the remainder)."""
    if d % 2 or d < 2 * k:
        raise ConfigError(f"cannot split width {d} into {k} even sinusoid parts")
    base = (d // k) // 2 * 2
    parts = [base] * k
    parts[0] += d - base * k
    return parts


def sinusoid_positions(coords: np.ndarray, d: int) -> np.ndarray:
    """Fixed separable sin/cos table for (n, k) grid coordinates, shape (n, d).

    Each coordinate axis gets an even slice of the width; within a slice the
    usual geometric frequency ladder applies (sin/cos interleaved).
    """
    coords = np.asarray(coords, dtype=np.float64)
    n, k = coords.shape
    parts = _axis_dims(d, k)
    out = np.zeros((n, d), dtype=np.float64)
    col = 0
    for axis, p in enumerate(parts):
        half = p // 2
        inv_freq = 1.0 / (10000.0 ** (np.arange(half) * 2.0 / p))
        ang = coords[:, axis : axis + 1] * inv_freq[None, :]
        out[:, col : col + p : 2] = np.sin(ang)
        out[:, col + 1 : col + p : 2] = np.cos(ang)
        col += p
    return out
