"""Numba-jitted hot kernels.

Same contracts as ``numpy_ops``; accumulation is done in float64
regardless of input dtype.  First call per dtype pays a compile cost
(cached on disk afterwards).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def sdpa_fwd(q, k, v, scale):
    M, H, Lq, dh = q.shape
    Lk = k.shape[2]
    out = np.empty((M, H, Lq, dh), dtype=q.dtype)
    probs = np.empty((M, H, Lq, Lk), dtype=q.dtype)
    for m in range(M):
        for h in range(H):
            for i in range(Lq):
                mx = -np.inf
                for j in range(Lk):
                    s = 0.0
                    for d in range(dh):
                        s += q[m, h, i, d] * k[m, h, j, d]
                    s *= scale
                    probs[m, h, i, j] = s
                    if s > mx:
                        mx = s
                z = 0.0
                for j in range(Lk):
                    e = np.exp(probs[m, h, i, j] - mx)
                    probs[m, h, i, j] = e
                    z += e
                for j in range(Lk):
                    probs[m, h, i, j] /= z
                for d in range(dh):
                    acc = 0.0
                    for j in range(Lk):
                        acc += probs[m, h, i, j] * v[m, h, j, d]
                    out[m, h, i, d] = acc
    return out, probs


@njit(cache=True)
def sdpa_bwd(dout, q, k, v, probs, scale):
    M, H, Lq, dh = q.shape
    Lk = k.shape[2]
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    dscores = np.empty((Lq, Lk), dtype=q.dtype)
    for m in range(M):
        for h in range(H):
            for i in range(Lq):
                # dprobs and the softmax jacobian, row at a time
                rowdot = 0.0
                for j in range(Lk):
                    dp = 0.0
                    for d in range(dh):
                        dp += dout[m, h, i, d] * v[m, h, j, d]
                    dscores[i, j] = dp
                    rowdot += dp * probs[m, h, i, j]
                for j in range(Lk):
                    dscores[i, j] = probs[m, h, i, j] * (dscores[i, j] - rowdot)
            for j in range(Lk):
                for d in range(dh):
                    acc = 0.0
                    for i in range(Lq):
                        acc += probs[m, h, i, j] * dout[m, h, i, d]
                    dv[m, h, j, d] = acc
            for i in range(Lq):
                for d in range(dh):
                    acc = 0.0
                    for j in range(Lk):
                        acc += dscores[i, j] * k[m, h, j, d]
                    dq[m, h, i, d] = acc * scale
            for j in range(Lk):
                for d in range(dh):
                    acc = 0.0
                    for i in range(Lq):
                        acc += dscores[i, j] * q[m, h, i, d]
                    dk[m, h, j, d] = acc * scale
    return dq, dk, dv


@njit(cache=True)
def layernorm_fwd(x, eps):
    n, d = x.shape
    xhat = np.empty_like(x)
    inv_std = np.empty(n, dtype=x.dtype)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        istd = 1.0 / np.sqrt(var + eps)
        inv_std[i] = istd
        for j in range(d):
            xhat[i, j] = (x[i, j] - mu) * istd
    return xhat, inv_std


@njit(cache=True)
def layernorm_bwd(dy, xhat, inv_std):
    n, d = xhat.shape
    dx = np.empty_like(xhat)
    for i in range(n):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            s1 += dy[i, j]
            s2 += dy[i, j] * xhat[i, j]
        s1 /= d
        s2 /= d
        for j in range(d):
            dx[i, j] = inv_std[i] * (dy[i, j] - s1 - xhat[i, j] * s2)
    return dx
