"""The three conditional-prediction schemes behind one functional surface.

All schemes consume K observed frames as latent features:

* adaptive layer norm: a pooled condition code is fused with the step
  embedding, so every block's modulation pair depends on the condition
* cross-attention: each block gains a sub-layer whose keys/values are
  the embedded conditional tokens (with their own positions added)
* token concatenation: conditional tokens are prepended along the frame
  axis and the corresponding outputs discarded after the backbone

The network calls the *_fwd helpers here during its cached forward pass;
the cond_* functions are the standalone (forward-only) op surface.
"""

import numpy as np

from . import layers as L
from . import tokens as tk


def embed_cond_tokens(p, cfg, cond):
    """Patchify conditional latents and project with the shared patch
    embedding: (B, K, H, W, C) -> (B, K, P, D) plus the linear cache."""
    ctok = tk.patchify(cond, cfg.patch)
    return L.linear_fwd(ctok, p["embed.w"], p["embed.b"])


def build_cond_memory(p, cfg, cond):
    """Conditional key/value memory for cross-attention: embedded tokens
    with their own spatial and temporal positions, flattened to
    (B, K*P, D).  Returns (memory, embed_cache)."""
    ce, cache = embed_cond_tokens(p, cfg, cond)
    b, k, pp, d = ce.shape
    spat, temp = tk.positional_embeddings(k, cfg.grid_h, cfg.grid_w, d)
    ce = ce + spat.astype(ce.dtype)[None, None] + temp.astype(ce.dtype)[None, :, None]
    return np.ascontiguousarray(ce.reshape(b, k * pp, d)), cache


def cond_code_fwd(p, ce):
    """Pooled condition code: mean over all conditional tokens, then a
    2-layer MLP whose final layer is zero-initialized, so the code starts
    at 0 and modulation degenerates to the time-only pair."""
    pooled = ce.mean(axis=(1, 2))
    m1, c1 = L.linear_fwd(pooled, p["cond.mlp.w1"], p["cond.mlp.b1"])
    ag, cg = L.gelu_fwd(m1)
    code, c2 = L.linear_fwd(ag, p["cond.mlp.w2"], p["cond.mlp.b2"])
    return code, (c1, cg, c2, ce.shape)


def xattn_fwd(p, i, x, mem, heads):
    """Cross-attention sub-layer of block i: plain pre-norm, queries from
    the noisy tokens (B, T, P, D), keys/values from the memory.  The
    residual add is the caller's job."""
    b, t, pp, d = x.shape
    xh, ln_c = L.layernorm_fwd(x)
    xq = np.ascontiguousarray(xh.reshape(b, t * pp, d))
    y, attn_c = L.mha_fwd(xq, mem, heads, *(
        p[f"block{i}.xattn.{nm}"] for nm in
        ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")))
    return y.reshape(b, t, pp, d), (ln_c, attn_c)


def token_concat(cond_tokens, noisy_tokens):
    """Concatenate along the frame axis; conditional frames take temporal
    indices 0..K-1 and noisy frames K..K+F-1.

    Returns (combined, split) where split recovers the noisy-frame part
    of any array laid out over the combined frame axis.
    """
    if cond_tokens.shape[:-3] != noisy_tokens.shape[:-3] or \
            cond_tokens.shape[-2:] != noisy_tokens.shape[-2:]:
        raise ValueError(f"token grids differ: cond {cond_tokens.shape} vs "
                         f"noisy {noisy_tokens.shape}")
    k = cond_tokens.shape[-3]
    combined = np.concatenate([cond_tokens, noisy_tokens], axis=-3)

    def split(arr):
        return arr[..., k:, :, :]

    return combined, split


# ---------------------------------------------------------------------------
# standalone op surface (forward-only)

def cond_adaln(params, cfg, cond, t_emb, block: int = 0, sublayer: str = "ffn"):
    """Modulation pair (c_scale, c_shift) of one block sub-layer, driven by
    the fused step embedding and condition code.

    t_emb: (B, D) or (D,) step embedding; cond: (B, K, H, W, C) or
    (K, H, W, C) conditional latents.  Returns arrays matching t_emb's
    leading shape; c_scale includes the +1 offset, so a zero head yields
    the identity modulation.
    """
    if cond.ndim == 4:
        cond = cond[None]
    squeeze = t_emb.ndim == 1
    if squeeze:
        t_emb = t_emb[None]
    if cond.shape[1] < 1:
        raise ValueError("need at least one conditional frame")
    ce, _ = embed_cond_tokens(params, cfg, cond)
    code, _ = cond_code_fwd(params, ce)
    c = t_emb + code
    d = cfg.hidden
    prefix = f"block{block}.{sublayer}"
    modv, _ = L.linear_fwd(c, params[f"{prefix}.mod.w"], params[f"{prefix}.mod.b"])
    scale = 1.0 + modv[:, :d]
    shift = modv[:, d:]
    if squeeze:
        return scale[0], shift[0]
    return scale, shift


def cond_cross_attention(params, cfg, noisy_tokens, cond, block: int = 0):
    """Apply block `block`'s cross-attention sub-layer (with residual) to
    embedded noisy tokens (B, T, P, D) given conditional latents."""
    if cond.ndim == 4:
        cond = cond[None]
    squeeze = noisy_tokens.ndim == 3
    if squeeze:
        noisy_tokens = noisy_tokens[None]
    mem, _ = build_cond_memory(params, cfg, cond)
    y, _ = xattn_fwd(params, block, noisy_tokens, mem, cfg.heads)
    out = noisy_tokens + y
    return out[0] if squeeze else out


def cond_token_concat(cond_tokens, noisy_tokens):
    """Public alias of token_concat; see that function."""
    return token_concat(cond_tokens, noisy_tokens)
