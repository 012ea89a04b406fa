"""Differentiable layer primitives with explicit forward/backward pairs.

Every *_fwd returns (output, cache); the matching *_bwd consumes the
upstream gradient plus the cache and returns input/parameter gradients.
The attention and layer-norm inner loops are delegated to the selected
kernel backend (see kernels/__init__.py).
"""

import math

import numpy as np

from . import kernels as K

LN_EPS = 1e-6
_GELU_C = math.sqrt(2.0 / math.pi)


def linear_fwd(x, w, b):
    """y = x @ w + b over the last axis; leading axes arbitrary."""
    return x @ w + b, (x, w)


def linear_bwd(dy, cache):
    x, w = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0)
    return dx, dw, db


def layernorm_fwd(x):
    """Normalize the last axis to zero mean / unit variance, no affine."""
    shape = x.shape
    x2 = np.ascontiguousarray(x.reshape(-1, shape[-1]))
    xhat, inv_std = K.layernorm_fwd(x2, LN_EPS)
    return xhat.reshape(shape), (xhat, inv_std, shape)


def layernorm_bwd(dy, cache):
    xhat, inv_std, shape = cache
    dy2 = np.ascontiguousarray(dy.reshape(-1, shape[-1]))
    return K.layernorm_bwd(dy2, xhat, inv_std).reshape(shape)


def gelu_fwd(x):
    """tanh-approximation GELU."""
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    th = np.tanh(inner)
    return 0.5 * x * (1.0 + th), (x, th)


def gelu_bwd(dy, cache):
    x, th = cache
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    return dy * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)


def modulate_fwd(xn, scale, shift):
    """y = xn * (1 + scale) + shift with (B, D) modulation over (B, ..., D)."""
    ex = (slice(None),) + (None,) * (xn.ndim - 2)
    y = xn * (1.0 + scale[ex]) + shift[ex]
    return y, (xn, scale, ex)


def modulate_bwd(dy, cache):
    xn, scale, ex = cache
    axes = tuple(range(1, dy.ndim - 1))
    dxn = dy * (1.0 + scale[ex])
    dscale = (dy * xn).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    return dxn, dscale, dshift


def ada_layer_norm(h, scale, shift):
    """LayerNorm over the channel axis followed by elementwise scale/shift.

    Public convenience: scale=1, shift=0 gives plain LayerNorm.  scale and
    shift are (D,) or broadcastable against h's last axis.
    """
    hn, _ = layernorm_fwd(h)
    return scale * hn + shift


def _split_heads(x, heads):
    m, l, d = x.shape
    return np.ascontiguousarray(
        x.reshape(m, l, heads, d // heads).transpose(0, 2, 1, 3)
    )


def _merge_heads(x4):
    m, h, l, dh = x4.shape
    return x4.transpose(0, 2, 1, 3).reshape(m, l, h * dh)


def mha_fwd(xq, xkv, heads, wq, bq, wk, bk, wv, bv, wo, bo):
    """Multi-head attention: queries from xq (M, Lq, D), keys/values
    from xkv (M, Lk, D).  Self-attention passes the same array twice."""
    q = xq @ wq + bq
    k = xkv @ wk + bk
    v = xkv @ wv + bv
    dh = q.shape[-1] // heads
    scale = 1.0 / math.sqrt(dh)
    q4, k4, v4 = (_split_heads(a, heads) for a in (q, k, v))
    out4, probs = K.sdpa_fwd(q4, k4, v4, scale)
    merged = _merge_heads(out4)
    y = merged @ wo + bo
    cache = (xq, xkv, wq, wk, wv, wo, q4, k4, v4, probs, merged, heads, scale)
    return y, cache


def mha_bwd(dy, cache):
    """Returns (dxq, dxkv, param_grads) with param_grads ordered
    (dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo)."""
    xq, xkv, wq, wk, wv, wo, q4, k4, v4, probs, merged, heads, scale = cache

    dmerged = dy @ wo.T
    dwo = merged.reshape(-1, merged.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    dbo = dy.reshape(-1, dy.shape[-1]).sum(axis=0)

    dout4 = _split_heads(dmerged, heads)
    dq4, dk4, dv4 = K.sdpa_bwd(dout4, q4, k4, v4, probs, scale)
    dq = _merge_heads(dq4)
    dk = _merge_heads(dk4)
    dv = _merge_heads(dv4)

    def proj_bwd(dp, x):
        x2 = x.reshape(-1, x.shape[-1])
        dp2 = dp.reshape(-1, dp.shape[-1])
        return x2.T @ dp2, dp2.sum(axis=0)

    dwq, dbq = proj_bwd(dq, xq)
    dwk, dbk = proj_bwd(dk, xkv)
    dwv, dbv = proj_bwd(dv, xkv)
    dxq = dq @ wq.T
    dxkv = dk @ wk.T + dv @ wv.T
    return dxq, dxkv, (dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo)
