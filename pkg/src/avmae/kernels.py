"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is chosen once at import time: numba when it is importable and
the environment variable ``AVMAE_NUMBA`` is not ``0``. Set ``AVMAE_NUMBA=0``
to force the numpy path (useful for debugging and for the benchmark in
``benchmarks/bench_kernels.py``). Both paths compute the same math; they may
differ in the last few ulps because of summation order.

All kernels preserve the dtype of their inputs and are deterministic.
"""

import math
import os

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

try:
    if os.environ.get("AVMAE_NUMBA", "1") == "0":
        raise ImportError("numba disabled via AVMAE_NUMBA=0")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------

def _gelu_fwd_np(x):
    return (0.5 * x * (1.0 + _erf(x * _INV_SQRT2))).astype(x.dtype, copy=False)


def _gelu_bwd_np(x, dy):
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return (dy * (cdf + x * pdf)).astype(x.dtype, copy=False)


def _softmax_fwd_np(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_bwd_np(y, dy):
    inner = (dy * y).sum(axis=-1, keepdims=True)
    return y * (dy - inner)


def _layernorm_fwd_np(x, gamma, beta, eps):
    mean = x.mean(axis=-1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = xc * rstd * gamma + beta
    return y.astype(x.dtype, copy=False), mean[..., 0], rstd[..., 0]


def _layernorm_bwd_np(x, gamma, mean, rstd, dy):
    d = x.shape[-1]
    xhat = (x - mean[..., None]) * rstd[..., None]
    dg = (dy * xhat).reshape(-1, d).sum(axis=0)
    db = dy.reshape(-1, d).sum(axis=0)
    dxhat = dy * gamma
    s1 = dxhat.sum(axis=-1, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=-1, keepdims=True)
    dx = rstd[..., None] * (dxhat - (s1 + xhat * s2) / d)
    return dx.astype(x.dtype, copy=False), dg.astype(gamma.dtype, copy=False), db.astype(gamma.dtype, copy=False)


def _adam_step_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _sgdm_step_np(p, g, buf, lr, momentum):
    buf *= momentum
    buf += g
    p -= lr * buf


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _gelu_fwd_nb(x):
        out = np.empty_like(x)
        flat = x.ravel()
        oflat = out.ravel()
        for i in range(flat.size):
            xi = flat[i]
            oflat[i] = 0.5 * xi * (1.0 + math.erf(xi * _INV_SQRT2))
        return out

    @njit(cache=True)
    def _gelu_bwd_nb(x, dy):
        out = np.empty_like(x)
        xf = x.ravel()
        df = dy.ravel()
        of = out.ravel()
        for i in range(xf.size):
            xi = xf[i]
            cdf = 0.5 * (1.0 + math.erf(xi * _INV_SQRT2))
            pdf = math.exp(-0.5 * xi * xi) * _INV_SQRT2PI
            of[i] = df[i] * (cdf + xi * pdf)
        return out

    @njit(cache=True)
    def _softmax_fwd_nb(x):
        n, d = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(d):
                e = math.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            inv = 1.0 / s
            for j in range(d):
                out[i, j] *= inv
        return out

    @njit(cache=True)
    def _softmax_bwd_nb(y, dy):
        n, d = y.shape
        out = np.empty_like(y)
        for i in range(n):
            inner = 0.0
            for j in range(d):
                inner += dy[i, j] * y[i, j]
            for j in range(d):
                out[i, j] = y[i, j] * (dy[i, j] - inner)
        return out

    @njit(cache=True)
    def _layernorm_fwd_nb(x, gamma, beta, eps):
        n, d = x.shape
        out = np.empty_like(x)
        mean = np.empty(n, dtype=x.dtype)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            m = 0.0
            for j in range(d):
                m += x[i, j]
            m /= d
            v = 0.0
            for j in range(d):
                t = x[i, j] - m
                v += t * t
            v /= d
            r = 1.0 / math.sqrt(v + eps)
            mean[i] = m
            rstd[i] = r
            for j in range(d):
                out[i, j] = (x[i, j] - m) * r * gamma[j] + beta[j]
        return out, mean, rstd

    @njit(cache=True)
    def _layernorm_bwd_nb(x, gamma, mean, rstd, dy):
        n, d = x.shape
        dx = np.empty_like(x)
        dg = np.zeros(d, dtype=gamma.dtype)
        db = np.zeros(d, dtype=gamma.dtype)
        for i in range(n):
            m = mean[i]
            r = rstd[i]
            s1 = 0.0
            s2 = 0.0
            for j in range(d):
                xhat = (x[i, j] - m) * r
                dxh = dy[i, j] * gamma[j]
                dg[j] += dy[i, j] * xhat
                db[j] += dy[i, j]
                s1 += dxh
                s2 += dxh * xhat
            for j in range(d):
                xhat = (x[i, j] - m) * r
                dxh = dy[i, j] * gamma[j]
                dx[i, j] = r * (dxh - (s1 + xhat * s2) / d)
        return dx, dg, db

    @njit(cache=True)
    def _adam_step_nb(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
        pf = p.ravel()
        gf = g.ravel()
        mf = m.ravel()
        vf = v.ravel()
        for i in range(pf.size):
            gi = gf[i]
            mf[i] = beta1 * mf[i] + (1.0 - beta1) * gi
            vf[i] = beta2 * vf[i] + (1.0 - beta2) * gi * gi
            pf[i] -= lr * (mf[i] / bc1) / (math.sqrt(vf[i] / bc2) + eps)

    @njit(cache=True)
    def _sgdm_step_nb(p, g, buf, lr, momentum):
        pf = p.ravel()
        gf = g.ravel()
        bf = buf.ravel()
        for i in range(pf.size):
            bf[i] = momentum * bf[i] + gf[i]
            pf[i] -= lr * bf[i]


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _rows(x):
    """View x as a contiguous 2-D array collapsing all leading axes."""
    x = np.ascontiguousarray(x)
    return x.reshape(-1, x.shape[-1])


def gelu_fwd(x):
    if BACKEND == "numba":
        return _gelu_fwd_nb(np.ascontiguousarray(x))
    return _gelu_fwd_np(x)


def gelu_bwd(x, dy):
    if BACKEND == "numba":
        return _gelu_bwd_nb(np.ascontiguousarray(x), np.ascontiguousarray(dy))
    return _gelu_bwd_np(x, dy)


def softmax_fwd(x):
    if BACKEND == "numba":
        return _softmax_fwd_nb(_rows(x)).reshape(x.shape)
    return _softmax_fwd_np(x)


def softmax_bwd(y, dy):
    if BACKEND == "numba":
        return _softmax_bwd_nb(_rows(y), _rows(dy)).reshape(y.shape)
    return _softmax_bwd_np(y, dy)


def layernorm_fwd(x, gamma, beta, eps):
    if BACKEND == "numba":
        y, mean, rstd = _layernorm_fwd_nb(_rows(x), gamma, beta, x.dtype.type(eps))
        lead = x.shape[:-1]
        return y.reshape(x.shape), mean.reshape(lead), rstd.reshape(lead)
    return _layernorm_fwd_np(x, gamma, beta, eps)


def layernorm_bwd(x, gamma, mean, rstd, dy):
    if BACKEND == "numba":
        dx, dg, db = _layernorm_bwd_nb(
            _rows(x), gamma, mean.ravel(), rstd.ravel(), _rows(dy)
        )
        return dx.reshape(x.shape), dg, db
    return _layernorm_bwd_np(x, gamma, mean, rstd, dy)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """In-place Adam update with bias correction factors bc1, bc2."""
    if BACKEND == "numba":
        _adam_step_nb(p, np.ascontiguousarray(g), m, v, lr, beta1, beta2, eps, bc1, bc2)
    else:
        _adam_step_np(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2)


def sgdm_step(p, g, buf, lr, momentum):
    """In-place SGD update with classical momentum."""
    if BACKEND == "numba":
        _sgdm_step_nb(p, np.ascontiguousarray(g), buf, lr, momentum)
    else:
        _sgdm_step_np(p, g, buf, lr, momentum)


# numpy reference implementations are exported for the parity tests and the
# kernel benchmark regardless of the active backend
numpy_impls = {
    "gelu_fwd": _gelu_fwd_np,
    "gelu_bwd": _gelu_bwd_np,
    "softmax_fwd": _softmax_fwd_np,
    "softmax_bwd": _softmax_bwd_np,
    "layernorm_fwd": _layernorm_fwd_np,
    "layernorm_bwd": _layernorm_bwd_np,
    "adam_step": _adam_step_np,
    "sgdm_step": _sgdm_step_np,
}

if HAVE_NUMBA:
    numba_impls = {
        "gelu_fwd": lambda x: _gelu_fwd_nb(np.ascontiguousarray(x)),
        "gelu_bwd": lambda x, dy: _gelu_bwd_nb(np.ascontiguousarray(x), np.ascontiguousarray(dy)),
        "softmax_fwd": lambda x: _softmax_fwd_nb(_rows(x)).reshape(x.shape),
        "softmax_bwd": lambda y, dy: _softmax_bwd_nb(_rows(y), _rows(dy)).reshape(y.shape),
        "layernorm_fwd": lambda x, g, b, eps: _layernorm_fwd_nb(_rows(x), g, b, x.dtype.type(eps)),
        "layernorm_bwd": _layernorm_bwd_nb,
        "adam_step": _adam_step_nb,
        "sgdm_step": _sgdm_step_nb,
    }
else:
    numba_impls = None
