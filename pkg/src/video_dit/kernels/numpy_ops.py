"""Pure-numpy reference implementations of the hot kernels.

These are the fallback path when numba is unavailable or disabled via
``VIDEO_DIT_BACKEND=numpy``.  The numba implementations in
``numba_ops.py`` must agree with these to floating-point roundoff.
"""

import numpy as np


def sdpa_fwd(q, k, v, scale):
    """Scaled dot-product attention forward.

    q: (M, H, Lq, dh), k/v: (M, H, Lk, dh).  Returns (out, probs) with
    out (M, H, Lq, dh) and softmax probs (M, H, Lq, Lk).
    """
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    probs = np.exp(scores)
    probs /= probs.sum(axis=-1, keepdims=True)
    return probs @ v, probs


def sdpa_bwd(dout, q, k, v, probs, scale):
    """Backward pass matching sdpa_fwd. Returns (dq, dk, dv)."""
    dv = probs.transpose(0, 1, 3, 2) @ dout
    dprobs = dout @ v.transpose(0, 1, 3, 2)
    # softmax jacobian: ds = p * (dp - sum(dp * p))
    dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
    dq = (dscores @ k) * scale
    dk = (dscores.transpose(0, 1, 3, 2) @ q) * scale
    return dq, dk, dv


def layernorm_fwd(x, eps):
    """Layer normalization over the last axis, no learned affine.

    x: (n, D).  Returns (xhat, inv_std); xhat is the normalized output.
    """
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return xc * inv_std, inv_std[..., 0]


def layernorm_bwd(dy, xhat, inv_std):
    """Backward pass matching layernorm_fwd. Returns dx, shape (n, D)."""
    d = xhat.shape[-1]
    s1 = dy.sum(axis=-1, keepdims=True) / d
    s2 = (dy * xhat).sum(axis=-1, keepdims=True) / d
    return inv_std[..., None] * (dy - s1 - xhat * s2)
